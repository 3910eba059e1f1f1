//! Rotation and rigid-transform algebra.
//!
//! Quaternions follow the Hamilton convention and are stored scalar-first
//! `(w, x, y, z)`. Every constructor normalizes and canonicalizes the sign so
//! that `w >= 0`. Rotation perturbations are applied on the right:
//! `q ⊞ δθ = q ⊗ Exp(δθ)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle (rad) exp/log/Jacobians switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix with `skew(v) * u == v.cross(u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Quaternion-rate matrix acting on a vector-first quaternion `[x, y, z, w]`.
///
/// For a Hamilton quaternion `q`, `0.5 * omega_matrix(ω) * [q.vec; q.w]`
/// equals `q ⊗ [0, ω/2]` in the same layout.
pub fn omega_matrix(omega: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(omega)));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(omega);
    m.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-omega.transpose()));
    m
}

/// Right Jacobian of SO(3): `Exp(φ + ε) ≈ Exp(φ) Exp(Jr(φ) ε)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let s = skew(phi);
    if theta2.sqrt() < SMALL_ANGLE {
        return Mat3::identity() - 0.5 * s + (1.0 / 6.0) * s * s;
    }
    let theta = theta2.sqrt();
    Mat3::identity() - (1.0 - theta.cos()) / theta2 * s
        + (theta - theta.sin()) / (theta2 * theta) * s * s
}

/// Unit quaternion, Hamilton convention, canonical sign `w >= 0`.
#[derive(Clone, Copy, PartialEq)]
pub struct Quat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for Quat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quat(w={}, x={}, y={}, z={})", self.w, self.x, self.y, self.z)
    }
}

impl Default for Quat {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quat {
    /// Normalizes and canonicalizes. A zero quaternion maps to identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Self::identity();
        }
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        }
    }

    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Vector part.
    pub fn vec(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Components in `(w, x, y, z)` order.
    pub fn coords(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    /// Quaternion exponential of a rotation vector: `[cos(θ/2), sin(θ/2) φ/θ]`.
    pub fn exp(phi: &Vec3) -> Self {
        let theta2 = phi.norm_squared();
        let theta = theta2.sqrt();
        let (c, k) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
        };
        Self::new(c, k * phi.x, k * phi.y, k * phi.z)
    }

    /// Rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        let v = self.vec();
        let s = v.norm();
        if s < SMALL_ANGLE {
            // 2 atan(s/w)/s ≈ (2/w)(1 - s²/(3w²))
            let w = self.w;
            return v * (2.0 / w * (1.0 - s * s / (3.0 * w * w)));
        }
        v * (2.0 * s.atan2(self.w) / s)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.vec().norm().atan2(self.w)
    }

    pub fn conjugate(&self) -> Self {
        // Conjugation keeps w, so the result stays canonical.
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vec();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Left-multiplication matrix in `(w, x, y, z)` layout: `a ⊗ b = L(a) b`.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Right-multiplication matrix in `(w, x, y, z)` layout: `a ⊗ b = R(b) a`.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }

    /// `self ⊗ Exp(δθ)`.
    pub fn boxplus(&self, delta: &Vec3) -> Self {
        *self * Self::exp(delta)
    }

    /// `Log(other⁻¹ ⊗ self)`, the inverse of [`Quat::boxplus`].
    pub fn boxminus(&self, other: &Quat) -> Vec3 {
        (other.inverse() * *self).log()
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(&self, other: &Quat, mu: f64) -> Self {
        // Canonical storage can still leave the pair on opposite hemispheres.
        let target = if self.dot(other) < 0.0 {
            Quat {
                w: -other.w,
                x: -other.x,
                y: -other.y,
                z: -other.z,
            }
        } else {
            *other
        };
        let rel = quat_product_raw(&self.conjugate(), &target);
        let rel_log = raw_log(&rel);
        *self * Self::exp(&(rel_log * mu))
    }

    /// Minimal rotation taking direction `from` onto direction `to`.
    pub fn rotation_between(from: &Vec3, to: &Vec3) -> Self {
        let a = from.normalize();
        let b = to.normalize();
        let c = a.dot(&b);
        let axis = a.cross(&b);
        if c < -1.0 + 1e-12 {
            // Antiparallel: any axis orthogonal to `a`.
            let ortho = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let axis = a.cross(&ortho).normalize();
            return Self::new(0.0, axis.x, axis.y, axis.z);
        }
        Self::new(1.0 + c, axis.x, axis.y, axis.z)
    }

    /// Heading angle (rotation about world z) of the ZYX decomposition.
    pub fn yaw(&self) -> f64 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, rhs: Quat) -> Quat {
        let r = quat_product_raw(&self, &rhs);
        Quat::new(r.w, r.x, r.y, r.z)
    }
}

/// Hamilton product without renormalization or sign canonicalization.
fn quat_product_raw(a: &Quat, b: &Quat) -> Quat {
    Quat {
        w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    }
}

fn raw_log(q: &Quat) -> Vec3 {
    let v = q.vec();
    let s = v.norm();
    if s < SMALL_ANGLE {
        return v * (2.0 / q.w);
    }
    v * (2.0 * s.atan2(q.w) / s)
}

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_multiply(a: &Quat, b: &Quat) -> Quat {
    *a * *b
}

pub fn boxplus(q: &Quat, delta: &Vec3) -> Quat {
    q.boxplus(delta)
}

pub fn boxminus(q: &Quat, other: &Quat) -> Vec3 {
    q.boxminus(other)
}

/// Rotation followed by translation: `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quat::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Quat::identity(), t)
    }

    pub fn from_rotation(q: Quat) -> Self {
        Self::new(q, Vec3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(r_inv, -r_inv.rotate(&self.translation))
    }

    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// Rotation slerped, translation linearly interpolated.
    pub fn slerp(&self, other: &RigidTransform, mu: f64) -> Self {
        Self::new(
            self.rotation.slerp(&other.rotation, mu),
            self.translation + (other.translation - self.translation) * mu,
        )
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// See [`RigidTransform::slerp`].
pub fn slerp(a: &RigidTransform, b: &RigidTransform, mu: f64) -> RigidTransform {
    a.slerp(b, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn rz(angle: f64) -> Quat {
        Quat::from_axis_angle(&Vec3::z(), angle)
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn quat() -> impl Strategy<Value = Quat> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z))
    }

    fn angle_between(a: &Quat, b: &Quat) -> f64 {
        (a.inverse() * *b).angle()
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        assert_eq!(
            skew(&Vec3::z()),
            Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn omega_matrix_layout() {
        assert_eq!(omega_matrix(&Vec3::zeros()), Matrix4::zeros());
        let m = omega_matrix(&Vec3::x());
        #[rustfmt::skip]
        let expected = Matrix4::new(
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, -1.0, 0.0, 0.0,
            -1.0, 0.0, 0.0, 0.0,
        );
        assert_eq!(m, expected);
    }

    #[test]
    fn quat_multiply_examples() {
        let q = Quat::new(0.3, -0.2, 0.9, 0.1);
        let p = Quat::identity() * q;
        assert!((p.coords() - q.coords()).norm() < 1e-15);
        let i = q * q.conjugate();
        assert!((i.coords() - Quat::identity().coords()).norm() < 1e-15);

        let half = rz(FRAC_PI_2) * rz(FRAC_PI_2);
        let expected = rz(FRAC_PI_2).to_matrix() * rz(FRAC_PI_2).to_matrix();
        assert!((half.to_matrix() - expected).norm() < 1e-15);
        assert!((half.angle() - PI).abs() < 1e-12);
    }

    #[test]
    fn slerp_examples() {
        let t = RigidTransform::new(rz(FRAC_PI_2), Vec3::new(1.0, 2.0, 3.0));
        let i = RigidTransform::identity();
        let s0 = slerp(&i, &t, 0.0);
        assert!(s0.rotation.angle() < 1e-15 && s0.translation.norm() < 1e-15);
        let s1 = slerp(&i, &t, 1.0);
        assert!(angle_between(&s1.rotation, &t.rotation) < 1e-12);
        assert!((s1.translation - t.translation).norm() < 1e-15);
        let half = slerp(&i, &RigidTransform::from_rotation(rz(FRAC_PI_2)), 0.5);
        assert!(angle_between(&half.rotation, &rz(FRAC_PI_4)) < 1e-12);
    }

    #[test]
    fn slerp_resolves_antipodal_inputs() {
        let a = Quat::identity();
        // Non-canonical negation of a small rotation: w < 0 before canonicalization
        // would make a naive slerp take the long way round.
        let b = rz(0.2);
        let neg = Quat {
            w: -b.w,
            x: -b.x,
            y: -b.y,
            z: -b.z,
        };
        let mid = a.slerp(&neg, 0.5);
        assert!(angle_between(&mid, &rz(0.1)) < 1e-12);
    }

    #[test]
    fn boxplus_examples() {
        let q = Quat::new(0.5, 0.1, -0.3, 0.2);
        assert_eq!(q.boxplus(&Vec3::zeros()), q);
        let r = Quat::identity().boxplus(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert!(angle_between(&r, &rz(FRAC_PI_2)) < 1e-15);
    }

    #[test]
    fn small_angle_exp_log() {
        let phi = Vec3::new(1e-10, -2e-10, 3e-11);
        let q = Quat::exp(&phi);
        assert!((q.log() - phi).norm() < 1e-24);
        assert!(q.w > 0.0);
    }

    #[test]
    fn omega_matrix_matches_quaternion_derivative() {
        let q = Quat::new(0.7, 0.1, -0.4, 0.3);
        let w = Vec3::new(0.3, -1.2, 0.8);
        let layout = Vector4::new(q.x, q.y, q.z, q.w);
        let lhs = 0.5 * omega_matrix(&w) * layout;
        let pure = Quat {
            w: 0.0,
            x: 0.5 * w.x,
            y: 0.5 * w.y,
            z: 0.5 * w.z,
        };
        let rhs = quat_product_raw(&q, &pure);
        let rhs = Vector4::new(rhs.x, rhs.y, rhs.z, rhs.w);
        assert!((lhs - rhs).norm() < 1e-15);
    }

    #[test]
    fn right_jacobian_matches_finite_difference() {
        let phi = Vec3::new(0.4, -0.7, 0.2);
        let jr = right_jacobian(&phi);
        let base = Quat::exp(&phi);
        let h = 1e-7;
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let col = base.inverse() * Quat::exp(&(phi + e));
            let fd = col.log() / h;
            assert!((fd - jr.column(k)).norm() < 1e-6);
        }
    }

    #[test]
    fn left_right_matrices_agree_with_product() {
        let a = Quat::new(0.2, 0.5, -0.1, 0.7);
        let b = Quat::new(0.9, -0.3, 0.2, 0.1);
        let p = quat_product_raw(&a, &b).coords();
        assert!((a.left_matrix() * b.coords() - p).norm() < 1e-15);
        assert!((b.right_matrix() * a.coords() - p).norm() < 1e-15);
    }

    #[test]
    fn rigid_inverse_compose() {
        let t = RigidTransform::new(Quat::new(0.3, 0.4, -0.5, 0.1), Vec3::new(3.0, -1.0, 2.0));
        let id = t * t.inverse();
        assert!(id.rotation.angle() < 1e-10);
        assert!(id.translation.norm() < 1e-10);
    }

    proptest! {
        #[test]
        fn skew_is_cross_product(v in vec3(), u in vec3()) {
            let s = skew(&v);
            prop_assert!((s * u - v.cross(&u)).norm() < 1e-15);
            prop_assert!((s + s.transpose()).norm() == 0.0);
        }

        #[test]
        fn constructed_quaternions_are_unit_and_canonical(q in quat()) {
            prop_assert!((q.coords().norm() - 1.0).abs() < 1e-12);
            prop_assert!(q.w() >= 0.0);
        }

        #[test]
        fn rotation_preserves_norm(q in quat(), v in vec3()) {
            prop_assert!((q.rotate(&v).norm() - v.norm()).abs() < 1e-12);
            prop_assert!((q.rotate(&v) - q.to_matrix() * v).norm() < 1e-12);
        }

        #[test]
        fn multiply_is_associative(a in quat(), b in quat(), c in quat()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!(angle_between(&l, &r) < 1e-12);
        }

        #[test]
        fn slerp_angle_is_proportional(axis in vec3(), angle in 0.0..3.0f64, mu in 0.0..1.0f64) {
            prop_assume!(axis.norm() > 1e-3);
            let q = Quat::from_axis_angle(&axis, angle);
            let s = Quat::identity().slerp(&q, mu);
            prop_assert!((s.angle() - mu * angle).abs() < 1e-10);
        }

        #[test]
        fn boxplus_boxminus_round_trip(q in quat(), d in vec3()) {
            // Inputs lie in ‖δθ‖ < √3; keep below π.
            let back = q.boxplus(&d).boxminus(&q);
            prop_assert!((back - d).norm() < 1e-10);
        }
    }
}

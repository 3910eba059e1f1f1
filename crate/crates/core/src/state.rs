//! Per-scan kinematic state and its 15-dimensional error state.
//!
//! Error-state ordering is `[δp, δv, δθ, δb_a, δb_ω]` everywhere in the crate.
//! Rotation uses right perturbation; every other block is additive.

use nalgebra::{SMatrix, SVector};

use crate::geometry::{Mat3, Quat, Vec3};

pub type Vector15 = SVector<f64, 15>;
pub type Matrix15 = SMatrix<f64, 15, 15>;

pub const P: usize = 0;
pub const V: usize = 3;
pub const THETA: usize = 6;
pub const BA: usize = 9;
pub const BW: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ImuBias {
    pub accel: Vec3,
    pub gyro: Vec3,
}

impl ImuBias {
    pub fn new(accel: Vec3, gyro: Vec3) -> Self {
        Self { accel, gyro }
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Body state at a scan end time `t`, expressed in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Body-to-world rotation.
    pub rotation: Quat,
    pub bias: ImuBias,
}

impl Default for State {
    fn default() -> Self {
        Self {
            t: 0.0,
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
            rotation: Quat::identity(),
            bias: ImuBias::zero(),
        }
    }
}

impl State {
    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_matrix()
    }

    pub fn boxplus(&self, dx: &Vector15) -> State {
        let block = |i: usize| dx.fixed_rows::<3>(i).into_owned();
        State {
            t: self.t,
            position: self.position + block(P),
            velocity: self.velocity + block(V),
            rotation: self.rotation.boxplus(&block(THETA)),
            bias: ImuBias {
                accel: self.bias.accel + block(BA),
                gyro: self.bias.gyro + block(BW),
            },
        }
    }

    /// Error state `δx` with `other.boxplus(δx) == self`.
    pub fn boxminus(&self, other: &State) -> Vector15 {
        let mut dx = Vector15::zeros();
        dx.fixed_rows_mut::<3>(P)
            .copy_from(&(self.position - other.position));
        dx.fixed_rows_mut::<3>(V)
            .copy_from(&(self.velocity - other.velocity));
        dx.fixed_rows_mut::<3>(THETA)
            .copy_from(&self.rotation.boxminus(&other.rotation));
        dx.fixed_rows_mut::<3>(BA)
            .copy_from(&(self.bias.accel - other.bias.accel));
        dx.fixed_rows_mut::<3>(BW)
            .copy_from(&(self.bias.gyro - other.bias.gyro));
        dx
    }
}

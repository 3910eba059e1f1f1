//! Point-level undistortion and point-to-line / point-to-plane residuals.
//!
//! A feature point `p_j` captured at `t_j ∈ [t_{k-1}, t_k]` is moved into the
//! body frame at `t_k` by the a-priori pose
//!
//! ```text
//! p̄_j = R_kᵀ(−v_k Δt_j − ½ g Δt_j²) + α_j,   q̄_j = γ_j,   Δt_j = t_k − t_j
//! ```
//!
//! followed by a correction `δT_j` that spreads the disagreement between the
//! current `x_k`, the fixed `x_{k-1}` and the full-window preintegration over
//! the sweep with weight `μ_j = Δt_j / (t_k − t_{k-1})`:
//!
//! ```text
//! q_D = q_k⁻¹ ⊗ q_{k-1} ⊗ γ⁻¹,     t_D = R_kᵀ(R_{k-1} t̄⁻¹ + p_{k-1} − p_k)
//! δq_j = Exp(2 μ_j vec(q_D)),    δp_j = μ_j t_D
//! ```
//!
//! with `t̄⁻¹` the translation of the inverse a-priori transform over the full
//! window. The undistorted point is `y = δR_j (q̄_j p_j + p̄_j) + δp_j` and its
//! world position `R_k y + p_k`. All quantities are re-evaluated from the
//! current iterate unless the context is frozen (one-pass mode).

use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix};

use crate::error::Result;
use crate::geometry::{right_jacobian, skew, Mat3, Quat, RigidTransform, Vec3};
use crate::map_matching::{Correspondence, PrimitiveKind};
use crate::preintegration::{rotation_residual_jacobians, sub_preintegration, Preintegration, PreintegrationCache};
use crate::state::{ImuBias, State, BA, BW, P, THETA, V};

pub type Matrix3x15 = SMatrix<f64, 3, 15>;

/// A-priori pose of the body at `t_j` relative to the body at `t_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct UndistortionTerms {
    pub p_bar: Vec3,
    pub q_bar: Quat,
    pub mu: f64,
    /// Preintegration from `t_j` to `t_k`, at its reference bias.
    pub sub: Preintegration,
}

/// Interpolation weight of a point time inside the window.
pub fn interpolation_factor(t_j: f64, t_start: f64, t_end: f64) -> f64 {
    let span = t_end - t_start;
    if span <= 0.0 {
        return 0.0;
    }
    ((t_end - t_j) / span).clamp(0.0, 1.0)
}

fn gravity_offset(x_k: &State, dt: f64, gravity: &Vec3) -> Vec3 {
    -x_k.velocity * dt - 0.5 * gravity * dt * dt
}

/// First-order bias-corrected `(α, γ)` without cloning the preintegration.
fn corrected_pose(p: &Preintegration, bias: &ImuBias) -> (Vec3, Quat) {
    let dba = bias.accel - p.bias.accel;
    let dbg = bias.gyro - p.bias.gyro;
    (
        p.alpha + p.d_alpha_d_ba() * dba + p.d_alpha_d_bg() * dbg,
        p.gamma.boxplus(&(p.d_theta_d_bg() * dbg)),
    )
}

fn apriori_from(sub: &Preintegration, x_k: &State, gravity: &Vec3) -> (Vec3, Quat) {
    let (alpha, gamma) = corrected_pose(sub, &x_k.bias);
    let rt = x_k.rotation_matrix().transpose();
    (rt * gravity_offset(x_k, sub.dt, gravity) + alpha, gamma)
}

pub fn apriori_undistort(
    cache: &PreintegrationCache,
    x_k: &State,
    gravity: &Vec3,
    t_j: f64,
) -> Result<UndistortionTerms> {
    let sub = sub_preintegration(cache, t_j)?;
    let (p_bar, q_bar) = apriori_from(&sub, x_k, gravity);
    Ok(UndistortionTerms {
        p_bar,
        q_bar,
        mu: interpolation_factor(t_j, cache.t_start(), cache.t_end()),
        sub,
    })
}

/// Discrepancy `T_k⁻¹ T_{k-1} T̄⁻¹` between the states and the full-window
/// a-priori transform.
pub fn discrepancy(x_k: &State, x_prev: &State, full: &Preintegration, gravity: &Vec3) -> RigidTransform {
    let (p_bar, q_bar) = apriori_from(full, x_k, gravity);
    let apriori = RigidTransform::new(q_bar, p_bar);
    let t_k = RigidTransform::new(x_k.rotation, x_k.position);
    let t_prev = RigidTransform::new(x_prev.rotation, x_prev.position);
    t_k.inverse() * t_prev * apriori.inverse()
}

/// Linearized slerp of the discrepancy from identity by `μ`.
pub fn correction(x_k: &State, x_prev: &State, full: &Preintegration, gravity: &Vec3, mu: f64) -> RigidTransform {
    let d = discrepancy(x_k, x_prev, full, gravity);
    RigidTransform::new(
        Quat::exp(&(2.0 * mu * d.rotation.vec())),
        mu * d.translation,
    )
}

/// `δT_j ∘ (q̄, p̄)`.
pub fn corrected_undistort(terms: &UndistortionTerms, delta: &RigidTransform) -> (Vec3, Quat) {
    (
        delta.rotation.rotate(&terms.p_bar) + delta.translation,
        delta.rotation * terms.q_bar,
    )
}

/// Everything needed to evaluate one LiDAR residual as a function of `x_k`.
#[derive(Clone, Debug)]
pub struct LidarResidualContext {
    pub correspondence: Correspondence,
    /// Point in the body frame at its capture time.
    pub point: Vec3,
    pub mu: f64,
    pub sub: Preintegration,
    pub full: Arc<Preintegration>,
    pub prev_state: State,
    pub gravity: Vec3,
    pub noise_sigma: f64,
    /// Undistorted body-frame point held fixed (one-pass mode).
    pub frozen: Option<Vec3>,
}

impl LidarResidualContext {
    pub fn new(
        correspondence: Correspondence,
        point: Vec3,
        cache: &PreintegrationCache,
        full: Arc<Preintegration>,
        t_j: f64,
        prev_state: State,
        gravity: Vec3,
        noise_sigma: f64,
    ) -> Result<Self> {
        Ok(Self {
            correspondence,
            point,
            mu: interpolation_factor(t_j, cache.t_start(), cache.t_end()),
            sub: sub_preintegration(cache, t_j)?,
            full,
            prev_state,
            gravity,
            noise_sigma,
            frozen: None,
        })
    }

    pub fn dim(&self) -> usize {
        match self.correspondence.kind {
            PrimitiveKind::Line => 3,
            PrimitiveKind::Plane => 1,
        }
    }

    /// Freezes undistortion at `x_init`.
    pub fn freeze_at(&mut self, x_init: &State) {
        self.frozen = None;
        self.frozen = Some(undistorted_point(self, x_init));
    }

    pub fn terms(&self, x_k: &State) -> UndistortionTerms {
        let (p_bar, q_bar) = apriori_from(&self.sub, x_k, &self.gravity);
        UndistortionTerms {
            p_bar,
            q_bar,
            mu: self.mu,
            sub: self.sub.clone(),
        }
    }
}

/// Quantities shared by every point of a window at one `x_k` iterate.
#[derive(Clone, Debug)]
pub struct WindowTerms {
    /// `2 vec(q_D)`.
    pub r_theta: Vec3,
    pub d_r_theta: Matrix3x15,
    /// Translation of the discrepancy.
    pub t_d: Vec3,
    pub d_t_d: Matrix3x15,
}

pub fn window_terms(x_k: &State, x_prev: &State, full: &Preintegration, gravity: &Vec3) -> WindowTerms {
    let r = x_k.rotation_matrix();
    let rt = r.transpose();
    let dbg = x_k.bias.gyro - full.bias.gyro;
    let dba = x_k.bias.accel - full.bias.accel;
    let phi_f = full.d_theta_d_bg() * dbg;
    let r_gf_t = full.gamma.boxplus(&phi_f).to_matrix().transpose();
    let alpha_f = full.alpha + full.d_alpha_d_ba() * dba + full.d_alpha_d_bg() * dbg;
    let u_f = gravity_offset(x_k, full.dt, gravity);
    let p_bar_f = rt * u_f + alpha_f;

    let mut dp_bar_f = Matrix3x15::zeros();
    dp_bar_f
        .fixed_view_mut::<3, 3>(0, V)
        .copy_from(&(-full.dt * rt));
    dp_bar_f
        .fixed_view_mut::<3, 3>(0, THETA)
        .copy_from(&skew(&(rt * u_f)));
    dp_bar_f
        .fixed_view_mut::<3, 3>(0, BA)
        .copy_from(&full.d_alpha_d_ba());
    dp_bar_f
        .fixed_view_mut::<3, 3>(0, BW)
        .copy_from(&full.d_alpha_d_bg());

    let m = r_gf_t * p_bar_f;
    let mut dt_inv = -r_gf_t * dp_bar_f;
    {
        let mut col = dt_inv.fixed_view_mut::<3, 3>(0, BW);
        col -= skew(&m) * right_jacobian(&phi_f) * full.d_theta_d_bg();
    }
    let r_prev = x_prev.rotation_matrix();
    let w = -(r_prev * m) + x_prev.position - x_k.position;
    let t_d = rt * w;
    let mut d_t_d = rt * r_prev * dt_inv;
    {
        let mut col = d_t_d.fixed_view_mut::<3, 3>(0, THETA);
        col += skew(&t_d);
    }
    {
        let mut col = d_t_d.fixed_view_mut::<3, 3>(0, P);
        col -= rt;
    }

    let (r_theta, d_theta, d_bg) = rotation_residual_jacobians(x_k, x_prev, full);
    let mut d_r_theta = Matrix3x15::zeros();
    d_r_theta.fixed_view_mut::<3, 3>(0, THETA).copy_from(&d_theta);
    d_r_theta.fixed_view_mut::<3, 3>(0, BW).copy_from(&d_bg);
    WindowTerms {
        r_theta,
        d_r_theta,
        t_d,
        d_t_d,
    }
}

impl LidarResidualContext {
    pub fn window_terms(&self, x_k: &State) -> WindowTerms {
        window_terms(x_k, &self.prev_state, &self.full, &self.gravity)
    }
}

/// Point expressed in the body frame at `t_k`.
pub fn undistorted_point(ctx: &LidarResidualContext, x_k: &State) -> Vec3 {
    if let Some(y) = ctx.frozen {
        return y;
    }
    let (p_bar, q_bar) = apriori_from(&ctx.sub, x_k, &ctx.gravity);
    let delta = correction(x_k, &ctx.prev_state, &ctx.full, &ctx.gravity, ctx.mu);
    delta.transform_point(&(q_bar.rotate(&ctx.point) + p_bar))
}

pub fn world_point(ctx: &LidarResidualContext, x_k: &State) -> Vec3 {
    x_k.rotation.rotate(&undistorted_point(ctx, x_k)) + x_k.position
}

/// World point and its Jacobian with respect to `x_k`'s error state.
pub fn world_point_jacobian(ctx: &LidarResidualContext, x_k: &State) -> (Vec3, Matrix3x15) {
    if ctx.frozen.is_some() {
        return world_point_jacobian_with(ctx, x_k, None);
    }
    world_point_jacobian_with(ctx, x_k, Some(&ctx.window_terms(x_k)))
}

/// As [`world_point_jacobian`] with precomputed window terms (ignored when
/// the context is frozen).
pub fn world_point_jacobian_with(
    ctx: &LidarResidualContext,
    x_k: &State,
    window: Option<&WindowTerms>,
) -> (Vec3, Matrix3x15) {
    let r = x_k.rotation_matrix();
    let (y, dy) = match (ctx.frozen, window) {
        (Some(y), _) => (y, Matrix3x15::zeros()),
        (None, Some(w)) => body_point_jacobian(ctx, x_k, w),
        (None, None) => body_point_jacobian(ctx, x_k, &ctx.window_terms(x_k)),
    };
    let mut jx = r * dy;
    {
        let mut col = jx.fixed_view_mut::<3, 3>(0, P);
        col += Mat3::identity();
    }
    {
        let mut col = jx.fixed_view_mut::<3, 3>(0, THETA);
        col -= r * skew(&y);
    }
    (r * y + x_k.position, jx)
}

fn body_point_jacobian(ctx: &LidarResidualContext, x_k: &State, w: &WindowTerms) -> (Vec3, Matrix3x15) {
    let rt = x_k.rotation_matrix().transpose();
    let sub = &ctx.sub;
    let dbg = x_k.bias.gyro - sub.bias.gyro;
    let dba = x_k.bias.accel - sub.bias.accel;
    let phi_j = sub.d_theta_d_bg() * dbg;
    let r_bar = sub.gamma.boxplus(&phi_j).to_matrix();
    let alpha = sub.alpha + sub.d_alpha_d_ba() * dba + sub.d_alpha_d_bg() * dbg;
    let u_j = gravity_offset(x_k, sub.dt, &ctx.gravity);
    let z = r_bar * ctx.point + rt * u_j + alpha;

    let mut dz = Matrix3x15::zeros();
    dz.fixed_view_mut::<3, 3>(0, V).copy_from(&(-sub.dt * rt));
    dz.fixed_view_mut::<3, 3>(0, THETA)
        .copy_from(&skew(&(rt * u_j)));
    dz.fixed_view_mut::<3, 3>(0, BA).copy_from(&sub.d_alpha_d_ba());
    dz.fixed_view_mut::<3, 3>(0, BW).copy_from(
        &(sub.d_alpha_d_bg() - r_bar * skew(&ctx.point) * right_jacobian(&phi_j) * sub.d_theta_d_bg()),
    );

    let theta = ctx.mu * w.r_theta;
    let d_r = Quat::exp(&theta).to_matrix();
    let y = d_r * z + ctx.mu * w.t_d;
    let dy = -d_r * skew(&z) * right_jacobian(&theta) * (ctx.mu * w.d_r_theta)
        + d_r * dz
        + ctx.mu * w.d_t_d;
    (y, dy)
}

/// `n^∧ (x_w − p₀)`; its norm is the point-to-line distance.
pub fn line_residual(ctx: &LidarResidualContext, x_k: &State) -> Vec3 {
    let c = &ctx.correspondence;
    c.normal.cross(&(world_point(ctx, x_k) - c.point))
}

/// Signed point-to-plane distance `nᵀ(x_w − p₀)`.
pub fn plane_residual(ctx: &LidarResidualContext, x_k: &State) -> f64 {
    let c = &ctx.correspondence;
    c.normal.dot(&(world_point(ctx, x_k) - c.point))
}

/// Residual of a world point against the context's primitive, padded to
/// three rows.
pub fn primitive_residual(c: &Correspondence, x_w: &Vec3) -> Vec3 {
    let d = x_w - c.point;
    match c.kind {
        PrimitiveKind::Line => c.normal.cross(&d),
        PrimitiveKind::Plane => Vec3::new(c.normal.dot(&d), 0.0, 0.0),
    }
}

/// Residual and Jacobian padded to three rows; only the first
/// [`LidarResidualContext::dim`] rows are meaningful.
pub fn evaluate(ctx: &LidarResidualContext, x_k: &State) -> (Vec3, Matrix3x15) {
    let window = if ctx.frozen.is_some() { None } else { Some(ctx.window_terms(x_k)) };
    evaluate_with(ctx, x_k, window.as_ref())
}

pub fn evaluate_with(ctx: &LidarResidualContext, x_k: &State, window: Option<&WindowTerms>) -> (Vec3, Matrix3x15) {
    let c = &ctx.correspondence;
    let (x_w, jx) = world_point_jacobian_with(ctx, x_k, window);
    let r = primitive_residual(c, &x_w);
    match c.kind {
        PrimitiveKind::Line => (r, skew(&c.normal) * jx),
        PrimitiveKind::Plane => {
            let mut j = Matrix3x15::zeros();
            j.row_mut(0).copy_from(&(c.normal.transpose() * jx));
            (r, j)
        }
    }
}

/// Residual as a dynamically sized vector (3 rows for lines, 1 for planes).
pub fn residual(ctx: &LidarResidualContext, x_k: &State) -> nalgebra::DVector<f64> {
    match ctx.correspondence.kind {
        PrimitiveKind::Line => nalgebra::DVector::from_column_slice(line_residual(ctx, x_k).as_slice()),
        PrimitiveKind::Plane => nalgebra::DVector::from_element(1, plane_residual(ctx, x_k)),
    }
}

/// `3×15` for lines, `1×15` for planes.
pub fn residual_jacobian(ctx: &LidarResidualContext, x_k: &State) -> DMatrix<f64> {
    let (_, j) = evaluate(ctx, x_k);
    let rows = ctx.dim();
    DMatrix::from_fn(rows, 15, |r, c| j[(r, c)])
}

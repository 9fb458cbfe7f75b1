use nalgebra::{SMatrix, SVector, Vector3};

use super::arm::ArmModel;
use super::pose::{geodesic_distance, Pose};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IkTarget {
    Position(Vector3<f64>),
    Pose(Pose),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkConfig {
    pub damping: f64,
    pub position_tol: f64,
    pub orientation_tol: f64,
    pub max_iters: usize,
    /// Per-iteration cap on the position error fed to the update (m).
    pub max_position_step: f64,
    /// Per-iteration cap on the orientation error fed to the update (rad).
    pub max_orientation_step: f64,
    /// Step halvings tried before declaring a stationary point.
    pub max_halvings: usize,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 0.1,
            position_tol: 1e-3,
            orientation_tol: 1e-2,
            max_iters: 200,
            max_position_step: 0.2,
            max_orientation_step: 0.5,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkResult {
    pub joints: [f64; 7],
    /// Distance from the tool point to the target position (m).
    pub position_residual: f64,
    /// Geodesic angle to the target orientation (rad); zero for
    /// position-only targets.
    pub orientation_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn residuals(arm: &ArmModel, q: &[f64; 7], target: &IkTarget) -> (f64, f64) {
    let pose = arm.forward_unchecked(q);
    match target {
        IkTarget::Position(p) => ((p - pose.position).norm(), 0.0),
        IkTarget::Pose(t) => (
            (t.position - pose.position).norm(),
            geodesic_distance(&t.orientation, &pose.orientation),
        ),
    }
}

fn capped(v: Vector3<f64>, cap: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > cap {
        v * (cap / n)
    } else {
        v
    }
}

/// Damped least squares: `Δθ = Jᵀ(JJᵀ + λ²I)⁻¹ e`, clamped to joint limits
/// each iteration. Non-convergence is reported through the flag.
pub fn ik_solve(arm: &ArmModel, target: &IkTarget, seed: &[f64; 7], config: &IkConfig) -> IkResult {
    let mut q = *seed;
    arm.clamp(&mut q);
    let done = |(p, o): (f64, f64)| p < config.position_tol && o < config.orientation_tol;
    let lambda2 = config.damping * config.damping;
    let weight = config.position_tol / config.orientation_tol;
    let mut iterations = 0;
    let mut res = residuals(arm, &q, target);
    let cost = |(p, o): (f64, f64)| p * p + (o * weight) * (o * weight);
    let mut best = (q, res);
    while !done(res) && iterations < config.max_iters {
        let pose = arm.forward_unchecked(&q);
        let jac = arm.jacobian(&q);
        let dq: SVector<f64, 7> = match target {
            IkTarget::Position(p) => {
                let e = capped(p - pose.position, config.max_position_step);
                let j = jac.fixed_rows::<3>(0).into_owned();
                let a = j * j.transpose() + SMatrix::<f64, 3, 3>::identity() * lambda2;
                let y = a.cholesky().map(|c| c.solve(&e)).unwrap_or_else(Vector3::zeros);
                j.transpose() * y
            }
            IkTarget::Pose(t) => {
                let ep = capped(t.position - pose.position, config.max_position_step);
                let err_rot = t.orientation * pose.orientation.inverse();
                let eo = capped(err_rot.scaled_axis(), config.max_orientation_step);
                let e = SVector::<f64, 6>::new(ep.x, ep.y, ep.z, eo.x, eo.y, eo.z);
                let a = jac * jac.transpose() + SMatrix::<f64, 6, 6>::identity() * lambda2;
                let y = a
                    .cholesky()
                    .map(|c| c.solve(&e))
                    .unwrap_or_else(SVector::<f64, 6>::zeros);
                jac.transpose() * y
            }
        };
        // Backtrack when the full step overshoots so unreachable targets
        // settle at the closest pose; if no fraction helps, take the full
        // step anyway to leave the clamped corner, keeping the best seen.
        let take = |alpha: f64| {
            let mut trial = q;
            for (v, d) in trial.iter_mut().zip(dq.iter()) {
                *v += alpha * d;
            }
            arm.clamp(&mut trial);
            (trial, residuals(arm, &trial, target))
        };
        let full = take(1.0);
        let mut next = full;
        let mut alpha = 1.0;
        for _ in 0..config.max_halvings {
            if cost(next.1) < cost(res) {
                break;
            }
            alpha *= 0.5;
            next = take(alpha);
        }
        if cost(next.1) >= cost(res) {
            next = full;
        }
        q = next.0;
        res = next.1;
        iterations += 1;
        if cost(res) < cost(best.1) {
            best = (q, res);
        }
    }
    let (q, res) = best;
    IkResult {
        joints: q,
        position_residual: res.0,
        orientation_residual: res.1,
        converged: done(res),
        iterations,
    }
}

//! Trajectory comparison metrics and evaluation reports.

mod report;

pub use report::{read_reports_csv, write_breakdown_csv, write_reports_csv, EvalAccumulator, EvalReport, PrimitiveBreakdown};

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::kinematics::geodesic_distance;

const GRIPPERS: usize = 2;
const BLOCK: usize = 7;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_pair<A: AsRef<[f64]>, B: AsRef<[f64]>>(pred: &[A], truth: &[B]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "trajectory lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    for (t, (p, q)) in pred.iter().zip(truth).enumerate() {
        let (p, q) = (p.as_ref(), q.as_ref());
        if p.len() != q.len() || p.len() < GRIPPERS * BLOCK || p.len() % BLOCK != 0 {
            return Err(Error::Contract(format!(
                "step {t}: state widths {} and {} are not matching entity blocks",
                p.len(),
                q.len()
            )));
        }
    }
    Ok(())
}

/// Per-step gripper position error in centimeters, averaged over the two
/// grippers.
pub fn gripper_position_errors_cm<A: AsRef<[f64]>, B: AsRef<[f64]>>(pred: &[A], truth: &[B]) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, q)| {
            let (p, q) = (p.as_ref(), q.as_ref());
            let total: f64 = (0..GRIPPERS)
                .map(|g| {
                    let o = g * BLOCK;
                    (0..3).map(|k| (p[o + k] - q[o + k]).powi(2)).sum::<f64>().sqrt()
                })
                .sum();
            100.0 * total / GRIPPERS as f64
        })
        .collect())
}

fn unit_quat(block: &[f64], step: usize) -> Result<UnitQuaternion<f64>> {
    let q = Quaternion::new(block[0], block[1], block[2], block[3]);
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
        return Err(Error::Contract(format!("step {step}: quaternion norm {n} is not unit")));
    }
    Ok(UnitQuaternion::new_unchecked(q / n))
}

/// Per-step geodesic orientation error in radians, averaged over the two
/// grippers.
pub fn gripper_angular_errors<A: AsRef<[f64]>, B: AsRef<[f64]>>(pred: &[A], truth: &[B]) -> Result<Vec<f64>> {
    check_pair(pred, truth)?;
    pred.iter()
        .zip(truth)
        .enumerate()
        .map(|(t, (p, q))| {
            let (p, q) = (p.as_ref(), q.as_ref());
            let mut total = 0.0;
            for g in 0..GRIPPERS {
                let o = g * BLOCK + 3;
                total += geodesic_distance(&unit_quat(&p[o..o + 4], t)?, &unit_quat(&q[o..o + 4], t)?);
            }
            Ok(total / GRIPPERS as f64)
        })
        .collect()
}

/// Mean and std of the gripper position error, in centimeters.
pub fn euclidean_error<A: AsRef<[f64]>, B: AsRef<[f64]>>(pred: &[A], truth: &[B]) -> Result<(f64, f64)> {
    Ok(mean_std(&gripper_position_errors_cm(pred, truth)?))
}

/// Mean and std of the gripper orientation error, in radians.
pub fn angular_error<A: AsRef<[f64]>, B: AsRef<[f64]>>(pred: &[A], truth: &[B]) -> Result<(f64, f64)> {
    Ok(mean_std(&gripper_angular_errors(pred, truth)?))
}

/// Result of aligning two sequences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtwAlignment {
    /// Summed step cost along the optimal path.
    pub cost: f64,
    /// Number of matched pairs on that path.
    pub length: usize,
}

impl DtwAlignment {
    pub fn normalized(&self) -> f64 {
        self.cost / self.length as f64
    }
}

/// Minimum-cost monotone alignment under Euclidean step cost. Among
/// equal-cost paths the shortest wins.
pub fn dtw_alignment<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<DtwAlignment> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("dtw needs two nonempty sequences".into()));
    }
    let m = b.len();
    let dist = |i: usize, j: usize| -> Result<f64> {
        let (x, y) = (a[i].as_ref(), b[j].as_ref());
        if x.len() != y.len() {
            return Err(Error::Contract(format!("dtw widths differ: {} vs {}", x.len(), y.len())));
        }
        Ok(x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
    };
    let better = |p: (f64, usize), q: (f64, usize)| p.0 < q.0 || (p.0 == q.0 && p.1 < q.1);
    let mut prev: Vec<(f64, usize)> = Vec::with_capacity(m);
    for i in 0..a.len() {
        let mut row: Vec<(f64, usize)> = Vec::with_capacity(m);
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = Vec::with_capacity(3);
                if i > 0 && j > 0 {
                    cands.push(prev[j - 1]);
                }
                if i > 0 {
                    cands.push(prev[j]);
                }
                if j > 0 {
                    cands.push(row[j - 1]);
                }
                cands.into_iter().reduce(|p, q| if better(q, p) { q } else { p }).expect("at least one")
            };
            row.push((best.0 + dist(i, j)?, best.1 + 1));
        }
        prev = row;
    }
    let (cost, length) = prev[m - 1];
    Ok(DtwAlignment { cost, length })
}

/// DTW distance, divided by the alignment length when `normalize` is set.
pub fn dtw_distance<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B], normalize: bool) -> Result<f64> {
    let al = dtw_alignment(a, b)?;
    Ok(if normalize { al.normalized() } else { al.cost })
}

/// Fraction of successful rollouts.
pub fn success_rate(outcomes: &[bool]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Contract("success rate of an empty rollout set".into()));
    }
    Ok(outcomes.iter().filter(|&&s| s).count() as f64 / outcomes.len() as f64)
}

use super::demos::{Dataset, Demonstration};
use crate::error::{Error, Result};

fn gripper_mean(state: &[f64]) -> [f64; 3] {
    std::array::from_fn(|k| 0.5 * (state[k] + state[7 + k]))
}

fn check(state: &[f64]) -> Result<()> {
    if state.len() < 14 || !state.len().is_multiple_of(7) {
        return Err(Error::Dimension(format!("state of width {}", state.len())));
    }
    Ok(())
}

/// Every entity's position relative to the mean gripper position.
pub fn relative_to_gripper_mean(state: &[f64]) -> Result<Vec<[f64; 3]>> {
    check(state)?;
    let m = gripper_mean(state);
    Ok(state
        .chunks(7)
        .map(|b| std::array::from_fn(|k| b[k] - m[k]))
        .collect())
}

/// Object positions become offsets from the gripper midpoint; gripper
/// blocks and all quaternions are left as they are. For states whose
/// positions lie on the recording grid the inverse is bit-exact.
pub fn to_relational(state: &[f64]) -> Result<Vec<f64>> {
    check(state)?;
    let m = gripper_mean(state);
    let mut out = state.to_vec();
    for block in out[14..].chunks_mut(7) {
        for k in 0..3 {
            block[k] -= m[k];
        }
    }
    Ok(out)
}

/// Inverse of [`to_relational`], using the absolute gripper blocks.
pub fn from_relational(state: &[f64]) -> Result<Vec<f64>> {
    check(state)?;
    let m = gripper_mean(state);
    let mut out = state.to_vec();
    for block in out[14..].chunks_mut(7) {
        for k in 0..3 {
            block[k] += m[k];
        }
    }
    Ok(out)
}

pub fn to_relational_coordinates(dataset: &Dataset) -> Result<Dataset> {
    if dataset.relational {
        return Err(Error::Contract("dataset is already relational".into()));
    }
    let demos = dataset
        .demos
        .iter()
        .map(|d| {
            Ok(Demonstration {
                initial: to_relational(&d.initial)?,
                states: d.states.iter().map(|s| to_relational(s)).collect::<Result<_>>()?,
                ..d.clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        task: dataset.task,
        demos,
        relational: true,
    })
}

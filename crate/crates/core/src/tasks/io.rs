use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::demos::{Dataset, Demonstration};
use super::spec::{PrimitiveId, TaskSpec};
use crate::error::{Error, Result};
use crate::kinematics::snap_positions;

const SIG_DIGITS: i32 = 9;

/// Plain decimal text with `SIG_DIGITS` significant digits, trailing
/// zeros removed.
pub(crate) fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (SIG_DIGITS - 1 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn header(task: &TaskSpec) -> Vec<String> {
    ["demo_id", "t", "primitive_id"]
        .iter()
        .map(|s| s.to_string())
        .chain(task.feature_names())
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

/// One row per state: `t = 0` (primitive 0) holds the initial state,
/// `t = 1..` the post-step states with their primitive labels.
pub fn write_dataset<W: Write>(dataset: &Dataset, task: &TaskSpec, out: W) -> Result<()> {
    if dataset.relational {
        return Err(Error::Contract("datasets are stored in absolute coordinates".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(task)).map_err(csv_err)?;
    for (id, demo) in dataset.demos.iter().enumerate() {
        let rows = std::iter::once((0, &demo.initial)).chain(
            demo.labels
                .iter()
                .map(|l| l.get())
                .zip(&demo.states),
        );
        for (t, (label, state)) in rows.enumerate() {
            let mut record = vec![id.to_string(), t.to_string(), label.to_string()];
            record.extend(state.iter().map(|&v| format_sig(v)));
            w.write_record(&record).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, task: &TaskSpec, path: &Path) -> Result<()> {
    write_dataset(dataset, task, File::create(path)?)
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_dataset<R: Read>(input: R, task: &TaskSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let expected = header(task);
    let mut demos: Vec<Demonstration> = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            if record.iter().ne(expected.iter().map(String::as_str)) {
                return Err(parse_err(line, format!("header does not match {}", task.kind)));
            }
            saw_header = true;
            continue;
        }
        if record.len() != expected.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", expected.len(), record.len()),
            ));
        }
        let int = |i: usize| -> Result<usize> {
            record[i]
                .parse()
                .map_err(|_| parse_err(line, format!("{} is not an integer: {:?}", expected[i], &record[i])))
        };
        let (demo_id, t, label) = (int(0)?, int(1)?, int(2)?);
        let mut state = (3..record.len())
            .map(|i| {
                record[i].parse::<f64>().map_err(|_| {
                    parse_err(line, format!("{} is not a number: {:?}", expected[i], &record[i]))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        snap_positions(&mut state);
        if t == 0 {
            if demo_id != demos.len() || label != 0 {
                return Err(parse_err(
                    line,
                    format!("demo {demo_id} must start at t = 0 with primitive 0, in order"),
                ));
            }
            demos.push(Demonstration {
                spawn: Vec::new(),
                initial: state,
                states: Vec::new(),
                labels: Vec::new(),
                success: false,
            });
            continue;
        }
        let count = demos.len();
        let demo = match demos.last_mut() {
            Some(d) if demo_id + 1 == count && t == d.states.len() + 1 => d,
            _ => return Err(parse_err(line, format!("row out of order: demo {demo_id}, t {t}"))),
        };
        let label = PrimitiveId::new(label)
            .ok()
            .filter(|p| p.index() < task.primitive_count())
            .ok_or_else(|| parse_err(line, format!("primitive {label} outside 1..={}", task.primitive_count())))?;
        demo.states.push(state);
        demo.labels.push(label);
    }
    if !saw_header {
        return Err(parse_err(1, "missing header"));
    }
    for (i, d) in demos.iter_mut().enumerate() {
        if d.labels != task.labels() {
            return Err(Error::Data(format!(
                "demo {i} labels do not follow the {} primitive sequence",
                task.kind
            )));
        }
        d.spawn = task
            .object_poses(&d.initial)?
            .iter()
            .map(|p| [p.position.x, p.position.y])
            .collect();
        let last = d.states.last().expect("labels checked nonempty");
        d.success = task.success(&task.object_poses(last)?);
    }
    Ok(Dataset {
        task: task.kind,
        demos,
        relational: false,
    })
}

pub fn load_dataset(path: &Path, task: &TaskSpec) -> Result<Dataset> {
    parse_dataset(File::open(path)?, task)
}

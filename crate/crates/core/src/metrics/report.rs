use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{dtw_distance, gripper_angular_errors, gripper_position_errors_cm, mean_std, success_rate};
use crate::error::{Error, Result};
use crate::tasks::PrimitiveId;

/// Position error restricted to the steps of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveBreakdown {
    pub primitive: PrimitiveId,
    pub name: String,
    pub steps: usize,
    pub euclidean_cm_mean: f64,
    pub euclidean_cm_std: f64,
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub rollouts: usize,
    pub euclidean_cm_mean: f64,
    pub euclidean_cm_std: f64,
    pub angular_rad_mean: f64,
    pub angular_rad_std: f64,
    /// Mean DTW distance over compared trajectories.
    pub dtw: f64,
    pub success_rate: f64,
    pub per_primitive: Vec<PrimitiveBreakdown>,
}

/// Pools per-step errors over many predicted/reference trajectory pairs.
#[derive(Clone, Debug)]
pub struct EvalAccumulator {
    names: Vec<String>,
    normalize_dtw: bool,
    position: Vec<f64>,
    angular: Vec<f64>,
    by_primitive: Vec<Vec<f64>>,
    dtw: Vec<f64>,
    outcomes: Vec<bool>,
}

impl EvalAccumulator {
    /// `names` lists the primitives in id order.
    pub fn new(names: Vec<String>, normalize_dtw: bool) -> Self {
        let k = names.len();
        Self {
            names,
            normalize_dtw,
            position: Vec::new(),
            angular: Vec::new(),
            by_primitive: vec![Vec::new(); k],
            dtw: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    /// Adds one rollout. `labels` gives the primitive active at each step.
    pub fn add<A: AsRef<[f64]>, B: AsRef<[f64]>>(
        &mut self,
        pred: &[A],
        truth: &[B],
        labels: &[PrimitiveId],
        success: bool,
    ) -> Result<()> {
        if labels.len() != pred.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} steps",
                labels.len(),
                pred.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| l.index() >= self.names.len()) {
            return Err(Error::UnknownPrimitive(bad.get()));
        }
        let pos = gripper_position_errors_cm(pred, truth)?;
        let ang = gripper_angular_errors(pred, truth)?;
        let dtw = dtw_distance(pred, truth, self.normalize_dtw)?;
        for (e, l) in pos.iter().zip(labels) {
            self.by_primitive[l.index()].push(*e);
        }
        self.position.extend(pos);
        self.angular.extend(ang);
        self.dtw.push(dtw);
        self.outcomes.push(success);
        Ok(())
    }

    /// Records a rollout outcome without a trajectory comparison.
    pub fn add_outcome(&mut self, success: bool) {
        self.outcomes.push(success);
    }

    pub fn finish(&self, model: impl Into<String>) -> Result<EvalReport> {
        let (em, es) = mean_std(&self.position);
        let (am, as_) = mean_std(&self.angular);
        let per_primitive = self
            .by_primitive
            .iter()
            .enumerate()
            .map(|(i, errs)| {
                let (m, s) = mean_std(errs);
                PrimitiveBreakdown {
                    primitive: PrimitiveId::from_index(i),
                    name: self.names[i].clone(),
                    steps: errs.len(),
                    euclidean_cm_mean: m,
                    euclidean_cm_std: s,
                }
            })
            .collect();
        Ok(EvalReport {
            model: model.into(),
            rollouts: self.outcomes.len(),
            euclidean_cm_mean: em,
            euclidean_cm_std: es,
            angular_rad_mean: am,
            angular_rad_std: as_,
            dtw: mean_std(&self.dtw).0,
            success_rate: success_rate(&self.outcomes)?,
            per_primitive,
        })
    }
}

const HEADER: [&str; 8] = [
    "model",
    "rollouts",
    "euclidean_cm_mean",
    "euclidean_cm_std",
    "angular_rad_mean",
    "angular_rad_std",
    "dtw",
    "success_rate",
];

/// One CSV row per report. Values use the shortest exact decimal form.
pub fn write_reports_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.model.clone(),
            r.rollouts.to_string(),
            r.euclidean_cm_mean.to_string(),
            r.euclidean_cm_std.to_string(),
            r.angular_rad_mean.to_string(),
            r.angular_rad_std.to_string(),
            r.dtw.to_string(),
            r.success_rate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_reports_csv`]. Breakdowns are not part
/// of this file and come back empty.
pub fn read_reports_csv<R: Read>(input: R) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected report header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.len() != HEADER.len() {
            return Err(Error::Parse { line, message: format!("expected {} fields", HEADER.len()) });
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse { line, message: format!("bad number {:?}", &rec[k]) })
        };
        out.push(EvalReport {
            model: rec[0].to_string(),
            rollouts: rec[1].parse().map_err(|_| Error::Parse { line, message: "bad rollout count".into() })?,
            euclidean_cm_mean: num(2)?,
            euclidean_cm_std: num(3)?,
            angular_rad_mean: num(4)?,
            angular_rad_std: num(5)?,
            dtw: num(6)?,
            success_rate: num(7)?,
            per_primitive: Vec::new(),
        });
    }
    Ok(out)
}

pub fn write_breakdown_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "primitive_id", "primitive", "steps", "euclidean_cm_mean", "euclidean_cm_std"])
        .map_err(csv_err)?;
    for r in reports {
        for b in &r.per_primitive {
            w.write_record([
                r.model.clone(),
                b.primitive.get().to_string(),
                b.name.clone(),
                b.steps.to_string(),
                b.euclidean_cm_mean.to_string(),
                b.euclidean_cm_std.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

impl EvalReport {
    /// Aligned plain-text table of several reports.
    pub fn table(reports: &[EvalReport]) -> String {
        let header = ["Model", "Euclidean (cm)", "Angular (rad)", "DTW", "% Success"];
        let rows: Vec<[String; 5]> = reports
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    format!("{:.2} ± {:.2}", r.euclidean_cm_mean, r.euclidean_cm_std),
                    format!("{:.3} ± {:.3}", r.angular_rad_mean, r.angular_rad_std),
                    format!("{:.4}", r.dtw),
                    format!("{:.0}%", 100.0 * r.success_rate),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut s = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = w - c.chars().count();
                    if i == 0 { format!("{c}{}", " ".repeat(pad)) } else { format!("{}{c}", " ".repeat(pad)) }
                })
                .collect();
            let _ = writeln!(s, "{}", parts.join(" | ").trim_end());
        };
        line(&header.map(String::from));
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&rule);
        for row in &rows {
            line(row);
        }
        s
    }

    /// Per-primitive breakdown as an aligned table.
    pub fn breakdown_table(&self) -> String {
        let labels: Vec<String> = self.per_primitive.iter().map(|b| format!("{}. {}", b.primitive, b.name)).collect();
        let name_w = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max(9);
        let mut s = format!("{:<name_w$} | {:>5} | Euclidean (cm)\n", "Primitive", "Steps");
        for (b, label) in self.per_primitive.iter().zip(&labels) {
            let _ = writeln!(
                s,
                "{label:<name_w$} | {:>5} | {:.2} ± {:.2}",
                b.steps,
                b.euclidean_cm_mean,
                b.euclidean_cm_std
            );
        }
        s
    }
}

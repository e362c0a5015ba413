//! Metrics rows and CSV emission: per-mission quality plus path traces.

use thiserror::Error;

use crate::learner::ClassIou;
use crate::planner::MissionRecord;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics csv line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One row of the experiment metrics: quality after mission `mission`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mission: usize,
    pub planner: String,
    /// Cumulative count of distinct pooled cells.
    pub pool_cells: usize,
    pub miou: f64,
    pub per_class: Vec<ClassIou>,
    /// Observed cells this mission whose mean novelty exceeded beta.
    pub high_novelty_cells: usize,
}

fn format_iou(iou: Option<f64>) -> String {
    match iou {
        Some(v) => format!("{v:.6}"),
        None => "nan".into(),
    }
}

/// CSV with header `mission,planner,pool_cells,miou,iou_<id>,...,
/// high_novelty_cells`; reals carry 6 decimal places, `\n` endings.
pub fn metrics_to_csv(rows: &[MetricsRow], class_ids: &[u8]) -> String {
    let mut out = String::from("mission,planner,pool_cells,miou");
    for id in class_ids {
        out.push_str(&format!(",iou_{id}"));
    }
    out.push_str(",high_novelty_cells\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.6}",
            row.mission, row.planner, row.pool_cells, row.miou
        ));
        for class in &row.per_class {
            out.push(',');
            out.push_str(&format_iou(class.iou));
        }
        out.push_str(&format!(",{}\n", row.high_novelty_cells));
    }
    out
}

/// Parse a metrics CSV produced by [`metrics_to_csv`].
pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(MetricsError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 5 || columns[..4] != ["mission", "planner", "pool_cells", "miou"] {
        return Err(MetricsError::Parse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let class_ids: Vec<u8> = columns[4..columns.len() - 1]
        .iter()
        .map(|c| {
            c.strip_prefix("iou_")
                .and_then(|id| id.parse().ok())
                .ok_or(MetricsError::Parse {
                    line: 1,
                    message: format!("unexpected column {c:?}"),
                })
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(MetricsError::Parse {
                line: idx + 1,
                message: format!("expected {} fields, got {}", columns.len(), fields.len()),
            });
        }
        let parse_err = |message: String| MetricsError::Parse {
            line: idx + 1,
            message,
        };
        let per_class = class_ids
            .iter()
            .zip(&fields[4..fields.len() - 1])
            .map(|(id, field)| {
                let value: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("bad iou {field:?}")))?;
                Ok(ClassIou {
                    class_id: *id,
                    iou: if value.is_nan() { None } else { Some(value) },
                })
            })
            .collect::<Result<_, MetricsError>>()?;
        rows.push(MetricsRow {
            mission: fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad mission {:?}", fields[0])))?,
            planner: fields[1].to_string(),
            pool_cells: fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad pool_cells {:?}", fields[2])))?,
            miou: fields[3]
                .parse()
                .map_err(|_| parse_err(format!("bad miou {:?}", fields[3])))?,
            per_class,
            high_novelty_cells: fields[fields.len() - 1]
                .parse()
                .map_err(|_| parse_err(format!("bad count {:?}", fields.last().unwrap())))?,
        });
    }
    Ok(rows)
}

/// Path trace CSV: `step,row,col,mean_novelty,action` per trajectory entry.
pub fn trace_to_csv(record: &MissionRecord) -> String {
    let mut out = String::from("step,row,col,mean_novelty,action\n");
    for (step, (cell, kind)) in record.trajectory.iter().zip(&record.steps).enumerate() {
        let novelty = record.observed.get(cell).copied().unwrap_or(0.0);
        out.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            step,
            cell.row,
            cell.col,
            novelty,
            kind.name()
        ));
    }
    out
}

//! Run output writers: CSV trajectories, JSONL event logs, and the human
//! summary block.
//!
//! Both machine formats are deterministic byte-for-byte for a given run
//! result: floats are written with 17 significant digits in the CSV (exact
//! round-trip) and with the shortest exact representation in the JSONL.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::sim::{EventLogEntry, RunResult, RunSummary, Sample};

/// Writes the trajectory table: `t`, the coordinates, the velocities, the
/// kinetic energy, and the active-set bitmask.
pub fn write_trajectory_csv(samples: &[Sample], out: &mut dyn Write) -> Result<()> {
    let nq = samples.first().map_or(0, |s| s.q.len());
    let mut header = String::from("t");
    for i in 0..nq {
        header.push_str(&format!(",q{i}"));
    }
    for i in 0..nq {
        header.push_str(&format!(",qd{i}"));
    }
    header.push_str(",kinetic,active_mask");
    writeln!(out, "{header}")?;
    for s in samples {
        write!(out, "{:.16e}", s.t)?;
        for v in s.q.iter() {
            write!(out, ",{v:.16e}")?;
        }
        for v in s.qdot.iter() {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out, ",{:.16e},{}", s.kinetic, s.active_mask)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EventRow<'a> {
    kind: &'static str,
    t: f64,
    indices: &'a [usize],
    w_loss: Option<f64>,
    gamma_ratio: Option<f64>,
    i_f: Option<&'a [f64]>,
    i_lambda: Option<&'a [f64]>,
    qdot_minus: Option<&'a [f64]>,
    qdot_plus: Option<&'a [f64]>,
    multipliers_unique: Option<bool>,
}

/// Writes one JSON object per event, in event order.
pub fn write_events_jsonl(events: &[EventLogEntry], out: &mut dyn Write) -> Result<()> {
    for e in events {
        let row = EventRow {
            kind: e.kind.as_str(),
            t: e.t,
            indices: &e.indices,
            w_loss: e.w_loss,
            gamma_ratio: e.gamma_ratio,
            i_f: e.i_f.as_deref(),
            i_lambda: e.i_lambda.as_deref(),
            qdot_minus: e.qdot_minus.as_deref(),
            qdot_plus: e.qdot_plus.as_deref(),
            multipliers_unique: e.multipliers_unique,
        };
        let line = serde_json::to_string(&row)
            .map_err(|e| crate::error::Error::internal(format!("event serialization: {e}")))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Human-readable run summary.
pub fn format_summary(s: &RunSummary) -> String {
    format!(
        "final time          {:.6}\n\
         accepted steps      {}\n\
         events              {}\n\
         impacts             {}\n\
         impact energy net   {:.6e}\n\
         final kinetic       {:.6e}\n\
         max constraint drift {:.3e}\n",
        s.t_final, s.steps, s.events, s.impacts, s.total_w_loss, s.final_kinetic, s.max_drift
    )
}

/// Writes the outputs a scenario requested and returns the summary text.
pub fn write_run_outputs(
    result: &RunResult,
    trajectory: Option<&std::path::Path>,
    events: Option<&std::path::Path>,
) -> Result<String> {
    if let Some(path) = trajectory {
        let mut f = std::fs::File::create(path)?;
        write_trajectory_csv(&result.samples, &mut f)?;
    }
    if let Some(path) = events {
        let mut f = std::fs::File::create(path)?;
        write_events_jsonl(&result.events, &mut f)?;
    }
    Ok(format_summary(&result.summary))
}

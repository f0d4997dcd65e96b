use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{RunReport, RunSummary};
use crate::error::{Error, Result};
use crate::flow::{DtChange, DtEvent, HistoryRecord};
use crate::mesh::write_vtk;

pub const HISTORY_HEADER: &str = "step,t,dt,E_total,E_kin,E_ext,E_har,E_xc,E_nuc,grad_norm,gram_err,level";

fn with_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_history_csv(path: &Path, history: &[HistoryRecord]) -> Result<()> {
    with_file(path, |w| {
        writeln!(w, "{HISTORY_HEADER}")?;
        for r in history {
            let e = &r.energy;
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.step, r.t, r.dt, e.total, e.kinetic, e.external, e.hartree, e.xc, e.nuclear, r.grad_norm, r.gram_err, r.level
            )?;
        }
        Ok(())
    })
}

pub fn write_dt_events_csv(path: &Path, events: &[DtEvent]) -> Result<()> {
    with_file(path, |w| {
        writeln!(w, "level,step,change,dt")?;
        for e in events {
            let change = match e.change {
                DtChange::Halved => "halved",
                DtChange::Doubled => "doubled",
            };
            writeln!(w, "{},{},{change},{:e}", e.level, e.step, e.dt)?;
        }
        Ok(())
    })
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    with_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, summary).map_err(std::io::Error::from)?;
        writeln!(w)
    })
}

pub(super) fn write_all(dir: &Path, report: &RunReport, export_density: bool) -> Result<()> {
    write_history_csv(&dir.join("history.csv"), &report.history)?;
    write_dt_events_csv(&dir.join("dt_events.csv"), &report.dt_events)?;
    write_summary(&dir.join("summary.json"), &report.summary)?;
    if export_density {
        if let (Some(mesh), Some(rho)) = (&report.final_mesh, &report.final_density) {
            write_vtk(&dir.join("density_final.vtk"), mesh, &[("rho", rho)])?;
        }
    }
    Ok(())
}

use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};

/// Legacy ASCII VTK 3.0 unstructured grid with optional per-vertex scalars.
pub fn write_vtk(path: &Path, mesh: &Mesh, point_scalars: &[(&str, &[f64])]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "ksflow mesh level {}", mesh.level());
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "CELLS {} {}", mesh.n_tets(), 5 * mesh.n_tets());
    for t in mesh.tets() {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.n_tets());
    for _ in 0..mesh.n_tets() {
        let _ = writeln!(s, "10");
    }
    if !point_scalars.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        for (name, values) in point_scalars {
            if values.len() != mesh.n_vertices() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} point values", mesh.n_vertices()),
                    found: values.len().to_string(),
                });
            }
            let _ = writeln!(s, "SCALARS {name} double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in values.iter() {
                let _ = writeln!(s, "{v:.17e}");
            }
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

//! Legacy ASCII VTK unstructured-grid output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use dem_core::assembly::GradientOperator;
use dem_core::grid::HexMesh;
use dem_core::Tensor;
use nalgebra::Matrix3;

use crate::error::CliError;

/// VTK cell type id of the linear hexahedron.
pub const VTK_HEXAHEDRON: u8 = 12;

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// Element-averaged displacement gradient, one matrix per hex.
pub fn cell_gradients(u: &Tensor, op: &GradientOperator) -> Vec<Matrix3<f64>> {
    let ppe = op.points_per_element();
    (0..op.n_elements())
        .map(|e| {
            let sum: Matrix3<f64> = (e * ppe..(e + 1) * ppe).map(|g| op.gradient_at(u.data(), g)).sum();
            sum / ppe as f64
        })
        .collect()
}

/// Renders the mesh with point vectors (`u` first, then any extras) and the
/// cell tensor `grad_u`.
pub fn render(mesh: &HexMesh, title: &str, point_vectors: &[(&str, &Tensor)], grad_u: &[Matrix3<f64>]) -> String {
    let coords = mesh.grid().coords();
    let cells = mesh.elements();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{}", title.replace('\n', " "));
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", coords.len());
    for x in coords {
        let _ = writeln!(s, "{} {} {}", num(x[0]), num(x[1]), num(x[2]));
    }
    let _ = writeln!(s, "CELLS {} {}", cells.len(), cells.len() * 9);
    for c in cells {
        let ids: Vec<String> = c.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "8 {}", ids.join(" "));
    }
    let _ = writeln!(s, "CELL_TYPES {}", cells.len());
    for _ in cells {
        let _ = writeln!(s, "{VTK_HEXAHEDRON}");
    }
    let _ = writeln!(s, "POINT_DATA {}", coords.len());
    for (name, field) in point_vectors {
        let _ = writeln!(s, "VECTORS {name} double");
        for r in 0..field.rows() {
            let v = field.row(r);
            let _ = writeln!(s, "{} {} {}", num(v[0]), num(v[1]), num(v[2]));
        }
    }
    let _ = writeln!(s, "CELL_DATA {}", cells.len());
    let _ = writeln!(s, "TENSORS grad_u double");
    for m in grad_u {
        for i in 0..3 {
            let _ = writeln!(s, "{} {} {}", num(m[(i, 0)]), num(m[(i, 1)]), num(m[(i, 2)]));
        }
        let _ = writeln!(s);
    }
    s
}

pub fn write_field(
    path: &Path,
    mesh: &HexMesh,
    op: &GradientOperator,
    u: &Tensor,
    u_ref: Option<&Tensor>,
) -> Result<(), CliError> {
    let mut vectors = vec![("u", u)];
    if let Some(r) = u_ref {
        vectors.push(("u_ref", r));
    }
    let text = render(mesh, "dem-solve displacement field", &vectors, &cell_gradients(u, op));
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

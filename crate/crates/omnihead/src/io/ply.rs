//! ASCII PLY export for triangle meshes.

use crate::error::Result;
use crate::mesh::Mesh;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Writes `mesh` as ASCII PLY (positions and triangle faces only).
pub fn write_ply(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar uint vertex_indices")?;
    writeln!(w, "end_header")?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_tetrahedron;

    #[test]
    fn header_and_counts_match() {
        let m = unit_tetrahedron();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ply");
        write_ply(&p, &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ply");
        assert!(text.contains("element vertex 4"));
        assert!(text.contains("element face 4"));
        let header_end = lines.iter().position(|&l| l == "end_header").unwrap();
        assert_eq!(lines.len(), header_end + 1 + 4 + 4);
        // Every face line references valid vertices.
        for l in &lines[header_end + 5..] {
            let ids: Vec<usize> = l.split_whitespace().skip(1).map(|t| t.parse().unwrap()).collect();
            assert!(ids.iter().all(|&i| i < 4));
        }
    }
}

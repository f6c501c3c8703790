//! Mesh, layout and seam file formats.
//!
//! Meshes use a Wavefront OBJ subset (`v`, `vt`, `f v/vt`); texture coordinates
//! populate the geo layout. Layouts and seams are TOML documents keyed by geo
//! point index.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClothMesh, Projection2D, SeamPairs, Vec2, Vec3};
use crate::error::{Error, Result};

/// Parsed OBJ contents: positions, texture coordinates, and per-face
/// `(vertex, uv)` index triples.
#[derive(Debug, Clone, Default)]
pub struct ObjData {
    pub positions: Vec<Vec3>,
    pub uvs: Vec<Vec2>,
    pub faces: Vec<[usize; 3]>,
    pub face_uvs: Vec<[usize; 3]>,
}

fn parse_float(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::Format(format!("line {line}: missing coordinate")))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad number {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("line {line}: non-finite value {tok:?}")));
    }
    Ok(v)
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn resolve_index(tok: &str, count: usize, face: usize, what: &str) -> Result<usize> {
    let i: i64 = tok
        .parse()
        .map_err(|_| Error::Format(format!("face {face}: bad {what} index {tok:?}")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::Format(format!(
            "face {face}: {what} index {i} out of range (1..={count})"
        )));
    }
    Ok(idx as usize)
}

pub fn parse_obj(text: &str) -> Result<ObjData> {
    let mut obj = ObjData::default();
    // Indices are resolved after the whole file is read, so faces may precede
    // the vertices they reference.
    let mut raw_faces: Vec<(usize, Vec<(String, String)>)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let x = parse_float(it.next(), line_no)?;
                let y = parse_float(it.next(), line_no)?;
                let z = parse_float(it.next(), line_no)?;
                obj.positions.push([x, y, z]);
            }
            Some("vt") => {
                let u = parse_float(it.next(), line_no)?;
                let v = parse_float(it.next(), line_no)?;
                obj.uvs.push([u, v]);
            }
            Some("f") => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let v = parts.next().unwrap_or("").to_string();
                    let t = parts.next().unwrap_or("").to_string();
                    if t.is_empty() {
                        return Err(Error::Format(format!(
                            "face {}: corner {tok:?} has no texture coordinate",
                            raw_faces.len()
                        )));
                    }
                    corners.push((v, t));
                }
                if corners.len() < 3 {
                    return Err(Error::Format(format!(
                        "face {}: needs at least 3 corners",
                        raw_faces.len()
                    )));
                }
                raw_faces.push((line_no, corners));
            }
            _ => {}
        }
    }
    for (face, (_, corners)) in raw_faces.iter().enumerate() {
        let idx: Vec<(usize, usize)> = corners
            .iter()
            .map(|(v, t)| {
                Ok((
                    resolve_index(v, obj.positions.len(), face, "vertex")?,
                    resolve_index(t, obj.uvs.len(), face, "texture")?,
                ))
            })
            .collect::<Result<_>>()?;
        // Fan triangulation for polygons.
        for k in 1..idx.len() - 1 {
            obj.faces.push([idx[0].0, idx[k].0, idx[k + 1].0]);
            obj.face_uvs.push([idx[0].1, idx[k].1, idx[k + 1].1]);
        }
    }
    Ok(obj)
}

pub fn write_obj(mesh: &ClothMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for p in &mesh.geo.points {
        let _ = writeln!(s, "vt {:?} {:?}", p[0], p[1]);
    }
    for (t, c) in mesh.triangles.iter().zip(&mesh.geo.corners) {
        let _ = writeln!(
            s,
            "f {}/{} {}/{} {}/{}",
            t[0] + 1,
            c[0] + 1,
            t[1] + 1,
            c[1] + 1,
            t[2] + 1,
            c[2] + 1
        );
    }
    s
}

/// TOML document for a 2D layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionDoc {
    pub points: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
}

impl ProjectionDoc {
    pub fn from_projection(p: &Projection2D) -> Self {
        Self {
            points: p.points.clone(),
            triangles: p.corners.clone(),
        }
    }

    pub fn into_projection(self) -> Result<Projection2D> {
        Projection2D::new(self.points, self.triangles)
    }
}

/// TOML document for seam pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeamDoc {
    pub pairs: Vec<[usize; 2]>,
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format(format!("{what}: {}", e.message())))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Internal(format!("serialising document: {e}")))
}

pub fn parse_projection(text: &str) -> Result<Projection2D> {
    let doc: ProjectionDoc = parse_toml(text, "projection document")?;
    for (i, p) in doc.points.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::Format(format!("projection point {i} is not finite")));
        }
    }
    doc.into_projection()
}

pub fn projection_to_toml(p: &Projection2D) -> Result<String> {
    to_toml(&ProjectionDoc::from_projection(p))
}

pub fn parse_seams(text: &str) -> Result<SeamPairs> {
    let doc: SeamDoc = parse_toml(text, "seam document")?;
    Ok(SeamPairs {
        pairs: doc.pairs.into_iter().map(|[a, b]| (a, b)).collect(),
    })
}

pub fn seams_to_toml(s: &SeamPairs) -> Result<String> {
    to_toml(&SeamDoc {
        pairs: s.pairs.iter().map(|&(a, b)| [a, b]).collect(),
    })
}

/// Builds a validated mesh from OBJ text plus optional layout/seam documents.
///
/// `geo_text` replaces the OBJ texture coordinates when given; it must list
/// the same triangles in the same order.
pub fn mesh_from_texts(
    obj_text: &str,
    geo_text: Option<&str>,
    topo_text: Option<&str>,
    seam_text: Option<&str>,
) -> Result<(ClothMesh, Option<SeamPairs>)> {
    let obj = parse_obj(obj_text)?;
    let geo = match geo_text {
        Some(t) => {
            let g = parse_projection(t)?;
            if g.n_triangles() != obj.faces.len() {
                return Err(Error::Format(format!(
                    "geo projection has {} triangles, mesh has {}",
                    g.n_triangles(),
                    obj.faces.len()
                )));
            }
            g
        }
        None => Projection2D::new(obj.uvs.clone(), obj.face_uvs.clone())?,
    };
    let topo = topo_text.map(parse_projection).transpose()?;
    let mesh = ClothMesh::new(obj.positions, obj.faces, geo, topo)?;
    let seams = match seam_text {
        Some(t) => {
            let s = parse_seams(t)?;
            mesh.check_seams(&s)?;
            Some(s)
        }
        None => None,
    };
    Ok((mesh, seams))
}

/// [`mesh_from_texts`] reading from files.
pub fn load_mesh(
    mesh_path: &Path,
    geo_path: Option<&Path>,
    topo_path: Option<&Path>,
    seam_path: Option<&Path>,
) -> Result<(ClothMesh, Option<SeamPairs>)> {
    let obj = read_text(mesh_path)?;
    let geo = geo_path.map(read_text).transpose()?;
    let topo = topo_path.map(read_text).transpose()?;
    let seams = seam_path.map(read_text).transpose()?;
    mesh_from_texts(&obj, geo.as_deref(), topo.as_deref(), seams.as_deref())
}

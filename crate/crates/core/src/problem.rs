//! Surface-charge test geometry: conductive spheres meshed as icospheres, and
//! the collocated single-layer Laplace kernel that defines the dense system.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{HmxError, Result};
use crate::oracle::DenseMatrix;
use crate::ORACLE_CAP;

pub type Point3 = [f64; 3];

/// Default upper bound on the number of panels a mesh may have.
pub const DEFAULT_MAX_PANELS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub centroid: Point3,
    pub area: f64,
    pub vertices: [usize; 3],
}

/// Triangulated sphere surfaces. Panel `i` is unknown `i` of the linear system.
#[derive(Debug, Clone)]
pub struct PanelMesh {
    vertices: Vec<Point3>,
    panels: Vec<Panel>,
    sphere_of: Vec<usize>,
    voltages: Vec<f64>,
}

pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: &Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalized(p: Point3) -> Point3 {
    let n = norm(&p);
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Unit icosahedron: 12 vertices, 20 counter-clockwise faces.
fn icosahedron() -> (Vec<Point3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let vertices = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalized)
    .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

/// Unit icosphere after `refinement` rounds of 4-way midpoint subdivision.
fn unit_icosphere(refinement: u32) -> (Vec<Point3>, Vec<[usize; 3]>) {
    let (mut vertices, mut faces) = icosahedron();
    for _ in 0..refinement {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push(normalized([
                    0.5 * (pa[0] + pb[0]),
                    0.5 * (pa[1] + pb[1]),
                    0.5 * (pa[2] + pb[2]),
                ]));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (vertices, faces)
}

/// Meshes one icosphere per center with `20 * 4^refinement` panels each.
pub fn build_sphere_mesh(
    centers: &[Point3],
    radius: f64,
    refinement: u32,
    voltages: &[f64],
) -> Result<PanelMesh> {
    build_sphere_mesh_capped(centers, radius, refinement, voltages, DEFAULT_MAX_PANELS)
}

pub fn build_sphere_mesh_capped(
    centers: &[Point3],
    radius: f64,
    refinement: u32,
    voltages: &[f64],
    max_panels: usize,
) -> Result<PanelMesh> {
    if centers.is_empty() {
        return Err(HmxError::Geometry("at least one sphere is required".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(HmxError::Geometry(format!("radius must be positive, got {radius}")));
    }
    if voltages.len() != centers.len() {
        return Err(HmxError::Geometry(format!(
            "{} voltages given for {} spheres",
            voltages.len(),
            centers.len()
        )));
    }
    for (a, ca) in centers.iter().enumerate() {
        for (b, cb) in centers.iter().enumerate().skip(a + 1) {
            let d = norm(&sub(ca, cb));
            if d <= 2.0 * radius {
                return Err(HmxError::Geometry(format!(
                    "spheres {a} and {b} intersect (center distance {d} <= {})",
                    2.0 * radius
                )));
            }
        }
    }
    let per_sphere = 4usize
        .checked_pow(refinement)
        .and_then(|p| p.checked_mul(20));
    let requested = per_sphere.and_then(|p| p.checked_mul(centers.len()));
    match requested {
        Some(n) if n <= max_panels => {}
        _ => {
            return Err(HmxError::Size {
                requested: requested.unwrap_or(usize::MAX),
                cap: max_panels,
            })
        }
    }

    let (unit_vertices, unit_faces) = unit_icosphere(refinement);
    let mut vertices = Vec::with_capacity(unit_vertices.len() * centers.len());
    let mut panels = Vec::with_capacity(unit_faces.len() * centers.len());
    let mut sphere_of = Vec::with_capacity(panels.capacity());
    for (s, c) in centers.iter().enumerate() {
        let offset = vertices.len();
        vertices.extend(unit_vertices.iter().map(|v| {
            [
                c[0] + radius * v[0],
                c[1] + radius * v[1],
                c[2] + radius * v[2],
            ]
        }));
        for f in &unit_faces {
            let idx = [f[0] + offset, f[1] + offset, f[2] + offset];
            let (p0, p1, p2) = (vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]);
            let centroid = [
                (p0[0] + p1[0] + p2[0]) / 3.0,
                (p0[1] + p1[1] + p2[1]) / 3.0,
                (p0[2] + p1[2] + p2[2]) / 3.0,
            ];
            let area = 0.5 * norm(&cross(&sub(&p1, &p0), &sub(&p2, &p0)));
            panels.push(Panel { centroid, area, vertices: idx });
            sphere_of.push(s);
        }
    }
    Ok(PanelMesh {
        vertices,
        panels,
        sphere_of,
        voltages: voltages.to_vec(),
    })
}

/// Centers of `count` spheres placed on the x-axis, `spacing` apart.
pub fn spheres_on_axis(count: usize, spacing: f64) -> Vec<Point3> {
    (0..count).map(|k| [k as f64 * spacing, 0.0, 0.0]).collect()
}

/// Three unit spheres spaced 3 apart on the x-axis, all held at voltage 1.
pub fn default_test_mesh(refinement: u32) -> Result<PanelMesh> {
    build_sphere_mesh(&spheres_on_axis(3, 3.0), 1.0, refinement, &[1.0; 3])
}

impl PanelMesh {
    /// Number of panels, i.e. the matrix dimension.
    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    pub fn sphere_of(&self, panel: usize) -> usize {
        self.sphere_of[panel]
    }

    pub fn voltages(&self) -> &[f64] {
        &self.voltages
    }

    pub fn total_area(&self) -> f64 {
        self.panels.iter().map(|p| p.area).sum()
    }

    /// Matrix entry `(i, j)`: potential at centroid `i` due to unit charge
    /// density on panel `j`.
    pub fn kernel_entry(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.len();
        if i >= n || j >= n {
            return Err(HmxError::Dimension {
                expected: n,
                actual: i.max(j),
            });
        }
        if i == j {
            return Ok(self_term(self.panels[i].area));
        }
        let r = norm(&sub(&self.panels[i].centroid, &self.panels[j].centroid));
        if r == 0.0 {
            return Err(HmxError::Singularity { i, j });
        }
        Ok(self.panels[j].area / (4.0 * PI * r))
    }

    /// Unchecked variant for blocks known to be geometrically separated.
    #[inline]
    pub(crate) fn kernel_far(&self, i: usize, j: usize) -> f64 {
        let r = norm(&sub(&self.panels[i].centroid, &self.panels[j].centroid));
        self.panels[j].area / (4.0 * PI * r)
    }

    /// Excitation vector: each panel carries its sphere's voltage.
    pub fn right_hand_side(&self) -> Vec<f64> {
        self.sphere_of.iter().map(|&s| self.voltages[s]).collect()
    }

    /// Full dense system matrix, for verification on small meshes.
    pub fn assemble_dense(&self) -> Result<DenseMatrix> {
        self.assemble_dense_capped(ORACLE_CAP)
    }

    pub fn assemble_dense_capped(&self, cap: usize) -> Result<DenseMatrix> {
        let n = self.len();
        if n > cap {
            return Err(HmxError::Size { requested: n, cap });
        }
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.kernel_entry(i, j)?;
            }
        }
        Ok(a)
    }

    /// Writes `cx cy cz area sphere_id`, one panel per line.
    pub fn write_panels<W: Write>(&self, mut out: W) -> Result<()> {
        for (p, s) in self.panels.iter().zip(&self.sphere_of) {
            writeln!(
                out,
                "{:.16e} {:.16e} {:.16e} {:.16e} {}",
                p.centroid[0], p.centroid[1], p.centroid[2], p.area, s
            )?;
        }
        Ok(())
    }
}

/// Single-layer self-integral of a flat disc with the panel's area,
/// evaluated at the disc center.
fn self_term(area: f64) -> f64 {
    (area / PI).sqrt() / 2.0
}

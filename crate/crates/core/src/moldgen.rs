//! Mold generation: turn a 2D outline into a skin solid and a two-part mold,
//! written as binary STL.
//!
//! Cavities, alignment holes, pour channels and the lip groove are interior
//! shells with inverted winding rather than boolean cuts, so every emitted
//! mesh is a union of closed, edge-paired shells.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STL_HEADER_TEXT: &str = concat!("anyskin-moldgen ", env!("CARGO_PKG_VERSION"));

const EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MoldError {
    #[error("contour is not closed")]
    OpenContour,
    #[error("contour edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("contour needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("unsupported drawing entity {0}")]
    UnsupportedEntity(String),
    #[error("inward offset of {0} mm collapses the contour")]
    OffsetCollapse(f64),
    #[error("triangulation failed: {0}")]
    TriangulationFailure(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A simple polygon with counter-clockwise vertices, closed implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour2D {
    vertices: Vec<[f64; 2]>,
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n).map(|i| {
        let (a, b) = (v[i], v[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    })
    .sum::<f64>()
        / 2.0
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) - EPS && p[0] <= a[0].max(b[0]) + EPS && p[1] >= a[1].min(b[1]) - EPS && p[1] <= a[1].max(b[1]) + EPS
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross2(q1, q2, p1);
    let d2 = cross2(q1, q2, p2);
    let d3 = cross2(p1, p2, q1);
    let d4 = cross2(p1, p2, q2);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS)) && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS)) {
        return true;
    }
    (d1.abs() <= EPS && on_segment(p1, q1, q2))
        || (d2.abs() <= EPS && on_segment(p2, q1, q2))
        || (d3.abs() <= EPS && on_segment(q1, p1, p2))
        || (d4.abs() <= EPS && on_segment(q2, p1, p2))
}

/// First pair of non-adjacent crossing edges, if any.
fn find_crossing(v: &[[f64; 2]]) -> Option<(usize, usize)> {
    let n = v.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges may only share their common vertex.
                let (a, b, c) = if j == i + 1 { (v[i], v[j], v[(j + 1) % n]) } else { (v[j], v[0], v[1]) };
                if cross2(a, b, c).abs() <= EPS && (c[0] - b[0]) * (a[0] - b[0]) + (c[1] - b[1]) * (a[1] - b[1]) > 0.0 {
                    return Some((i, j));
                }
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

impl Contour2D {
    /// Validates a vertex ring. Clockwise input is reversed.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self, MoldError> {
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MoldError::InvalidParams("non-finite vertex".into()));
        }
        vertices.dedup_by(|a, b| (a[0] - b[0]).abs() <= EPS && (a[1] - b[1]).abs() <= EPS);
        while vertices.len() > 1 {
            let (f, l) = (vertices[0], vertices[vertices.len() - 1]);
            if (f[0] - l[0]).abs() <= EPS && (f[1] - l[1]).abs() <= EPS {
                vertices.pop();
            } else {
                break;
            }
        }
        if vertices.len() < 3 {
            return Err(MoldError::TooFewVertices(vertices.len()));
        }
        if let Some((i, j)) = find_crossing(&vertices) {
            return Err(MoldError::SelfIntersecting(i, j));
        }
        let area = signed_area(&vertices);
        if area.abs() <= EPS {
            return Err(MoldError::TriangulationFailure("zero-area contour".into()));
        }
        if area < 0.0 {
            log::warn!("contour is clockwise; reversing");
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    /// Indices of the two vertices farthest apart; the lowest pair wins ties.
    pub fn diameter_pair(&self) -> (usize, usize) {
        let v = &self.vertices;
        let mut best = (0, 1, -1.0);
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let d = (v[i][0] - v[j][0]).powi(2) + (v[i][1] - v[j][1]).powi(2);
                if d > best.2 {
                    best = (i, j, d);
                }
            }
        }
        (best.0, best.1)
    }

    pub fn is_convex(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        (0..n).all(|i| cross2(v[i], v[(i + 1) % n], v[(i + 2) % n]) >= -EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContourFormat {
    /// `x y` per line, or a JSON array of pairs.
    PointList,
    /// Closed LWPOLYLINE entities of a DXF drawing.
    Dxf,
}

impl ContourFormat {
    pub fn detect(text: &str) -> Self {
        if text.lines().any(|l| matches!(l.trim(), "SECTION" | "ENTITIES" | "LWPOLYLINE")) {
            ContourFormat::Dxf
        } else {
            ContourFormat::PointList
        }
    }
}

pub fn parse_contour(text: &str, format: ContourFormat) -> Result<Contour2D, MoldError> {
    match format {
        ContourFormat::PointList => parse_point_list(text),
        ContourFormat::Dxf => parse_dxf(text),
    }
}

pub fn load_contour(path: &Path) -> Result<Contour2D, MoldError> {
    let text = std::fs::read_to_string(path)?;
    parse_contour(&text, ContourFormat::detect(&text))
}

fn parse_point_list(text: &str) -> Result<Contour2D, MoldError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let pts: Vec<[f64; 2]> =
            serde_json::from_str(trimmed).map_err(|e| MoldError::Parse { line: e.line(), msg: e.to_string() })?;
        return Contour2D::new(pts);
    }
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let nums: Vec<f64> = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MoldError::Parse { line: i + 1, msg: e.to_string() })?;
        if nums.len() != 2 {
            return Err(MoldError::Parse { line: i + 1, msg: format!("expected 2 numbers, got {}", nums.len()) });
        }
        pts.push([nums[0], nums[1]]);
    }
    Contour2D::new(pts)
}

fn parse_dxf(text: &str) -> Result<Contour2D, MoldError> {
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    if lines.len() % 2 != 0 {
        return Err(MoldError::Parse { line: lines.len(), msg: "dangling group code".into() });
    }
    let pairs: Vec<(i32, &str, usize)> = lines
        .chunks_exact(2)
        .enumerate()
        .map(|(k, c)| {
            c[0].parse::<i32>().map(|code| (code, c[1], 2 * k + 1)).map_err(|_| MoldError::Parse {
                line: 2 * k + 1,
                msg: format!("bad group code {:?}", c[0]),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut in_entities = false;
    let mut polylines: Vec<(Vec<[f64; 2]>, bool)> = Vec::new();
    let mut current: Option<(Vec<[f64; 2]>, bool)> = None;
    let mut pending_x: Option<f64> = None;
    let num = |v: &str, line: usize| v.parse::<f64>().map_err(|_| MoldError::Parse { line, msg: format!("bad number {v:?}") });

    for &(code, value, line) in &pairs {
        if code == 0 {
            if let Some(p) = current.take() {
                polylines.push(p);
            }
            match value {
                "SECTION" | "EOF" => {}
                "ENDSEC" => in_entities = false,
                "LWPOLYLINE" if in_entities => current = Some((Vec::new(), false)),
                other if in_entities => return Err(MoldError::UnsupportedEntity(other.to_string())),
                _ => {}
            }
            continue;
        }
        if code == 2 && value == "ENTITIES" {
            in_entities = true;
            continue;
        }
        let Some((pts, closed)) = current.as_mut() else { continue };
        match code {
            10 => pending_x = Some(num(value, line)?),
            20 => {
                let x = pending_x.take().ok_or(MoldError::Parse { line, msg: "y without x".into() })?;
                pts.push([x, num(value, line)?]);
            }
            70 => *closed = value.parse::<i64>().map_err(|_| MoldError::Parse { line, msg: "bad flags".into() })? & 1 == 1,
            42 if num(value, line)? != 0.0 => return Err(MoldError::UnsupportedEntity("LWPOLYLINE arc segment".into())),
            _ => {}
        }
    }
    if let Some(p) = current.take() {
        polylines.push(p);
    }
    let mut polylines = polylines.into_iter();
    let (pts, closed) = polylines.next().ok_or(MoldError::UnsupportedEntity("drawing has no LWPOLYLINE".into()))?;
    if polylines.next().is_some() {
        return Err(MoldError::UnsupportedEntity("more than one LWPOLYLINE".into()));
    }
    let ends_meet = pts.len() > 1 && {
        let (f, l) = (pts[0], pts[pts.len() - 1]);
        (f[0] - l[0]).abs() <= EPS && (f[1] - l[1]).abs() <= EPS
    };
    if !closed && !ends_meet {
        return Err(MoldError::OpenContour);
    }
    Contour2D::new(pts)
}

/// Miter-joined offset: outward for `d > 0`, inward for `d < 0`.
pub fn offset_contour(c: &Contour2D, d: f64) -> Result<Contour2D, MoldError> {
    if !d.is_finite() {
        return Err(MoldError::InvalidParams("offset must be finite".into()));
    }
    if d == 0.0 {
        return Ok(c.clone());
    }
    let v = &c.vertices;
    let n = v.len();
    let normal = |i: usize| {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
        let len = (tx * tx + ty * ty).sqrt();
        [ty / len, -tx / len]
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let n1 = normal((i + n - 1) % n);
        let n2 = normal(i);
        let cosine = n1[0] * n2[0] + n1[1] * n2[1];
        if 1.0 + cosine < 1e-9 {
            return Err(MoldError::SelfIntersecting((i + n - 1) % n, i));
        }
        let k = d / (1.0 + cosine);
        out.push([v[i][0] + k * (n1[0] + n2[0]), v[i][1] + k * (n1[1] + n2[1])]);
    }
    // An edge that flips direction means the offset has swept past it.
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let (p, q) = (out[i], out[(i + 1) % n]);
        if (b[0] - a[0]) * (q[0] - p[0]) + (b[1] - a[1]) * (q[1] - p[1]) <= EPS {
            return Err(if d < 0.0 { MoldError::OffsetCollapse(d) } else { MoldError::SelfIntersecting(i, i) });
        }
    }
    if let Some((i, j)) = find_crossing(&out) {
        return Err(MoldError::SelfIntersecting(i, j));
    }
    if signed_area(&out) <= EPS {
        return Err(MoldError::OffsetCollapse(d));
    }
    Ok(Contour2D { vertices: out })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl TriMesh {
    /// Unnormalized normal by the right-hand rule, twice the triangle area long.
    fn raw_normal(&self, t: &[u32; 3]) -> [f64; 3] {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        cross3(sub(b, a), sub(c, a))
    }

    pub fn unit_normal(&self, t: &[u32; 3]) -> [f64; 3] {
        let n = self.raw_normal(t);
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len == 0.0 {
            [0.0; 3]
        } else {
            n.map(|v| v / len)
        }
    }

    /// Signed volume by the divergence theorem; positive for outward winding.
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                let bc = cross3(b, c);
                a[0] * bc[0] + a[1] * bc[1] + a[2] * bc[2]
            })
            .sum::<f64>()
            / 6.0
    }

    /// Every directed edge appears once and its reverse appears once.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        edges.iter().all(|(&(a, b), &count)| count == 1 && edges.get(&(b, a)) == Some(&1))
    }

    pub fn has_degenerate_triangles(&self) -> bool {
        self.triangles.iter().any(|t| {
            let n = self.raw_normal(t);
            (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() <= 1e-12
        })
    }

    /// Copy with every triangle wound the other way.
    pub fn inverted(&self) -> TriMesh {
        TriMesh { vertices: self.vertices.clone(), triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect() }
    }

    pub fn translated(&self, d: [f64; 3]) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| [v[0] + d[0], v[1] + d[1], v[2] + d[2]]).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }
}

/// Ear-clipping triangulation of a CCW polygon; indices into `v`.
fn triangulate(v: &[[f64; 2]]) -> Result<Vec<[u32; 3]>, MoldError> {
    let mut ring: Vec<usize> = (0..v.len()).collect();
    let mut out = Vec::with_capacity(v.len().saturating_sub(2));
    while ring.len() > 3 {
        let m = ring.len();
        let ear = (0..m).find(|&k| {
            let (a, b, c) = (ring[(k + m - 1) % m], ring[k], ring[(k + 1) % m]);
            if cross2(v[a], v[b], v[c]) <= EPS {
                return false;
            }
            ring.iter().all(|&p| {
                if p == a || p == b || p == c {
                    return true;
                }
                // Reflex vertices on the ear boundary also block it.
                !(cross2(v[a], v[b], v[p]) >= -EPS && cross2(v[b], v[c], v[p]) >= -EPS && cross2(v[c], v[a], v[p]) >= -EPS)
            })
        });
        let Some(k) = ear else {
            return Err(MoldError::TriangulationFailure(format!("no ear among {m} vertices")));
        };
        let (a, b, c) = (ring[(k + m - 1) % m], ring[k], ring[(k + 1) % m]);
        out.push([a as u32, b as u32, c as u32]);
        ring.remove(k);
    }
    let (a, b, c) = (ring[0], ring[1], ring[2]);
    if cross2(v[a], v[b], v[c]) <= EPS {
        return Err(MoldError::TriangulationFailure("degenerate final triangle".into()));
    }
    out.push([a as u32, b as u32, c as u32]);
    Ok(out)
}

/// Prism over `c` from z = 0 to z = `height`, outward-wound.
pub fn extrude(c: &Contour2D, height: f64) -> Result<TriMesh, MoldError> {
    if !(height > 0.0 && height.is_finite()) {
        return Err(MoldError::InvalidParams(format!("extrusion height {height}")));
    }
    let v = &c.vertices;
    let n = v.len() as u32;
    let caps = triangulate(v)?;
    let mut mesh = TriMesh::default();
    mesh.vertices.extend(v.iter().map(|p| [p[0], p[1], 0.0]));
    mesh.vertices.extend(v.iter().map(|p| [p[0], p[1], height]));
    for t in &caps {
        mesh.triangles.push([t[0], t[2], t[1]]);
        mesh.triangles.push([t[0] + n, t[1] + n, t[2] + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        mesh.triangles.push([i, j, j + n]);
        mesh.triangles.push([i, j + n, i + n]);
    }
    Ok(mesh)
}

/// Axis-aligned box as an outward-wound prism.
pub fn box_mesh(lo: [f64; 3], hi: [f64; 3]) -> Result<TriMesh, MoldError> {
    let rect = Contour2D::new(vec![[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])?;
    Ok(extrude(&rect, hi[2] - lo[2])?.translated([0.0, 0.0, lo[2]]))
}

/// Closed ring between `inner` and its miter offset by `width`, from z = 0
/// to `height`.
fn ring_mesh(inner: &Contour2D, width: f64, height: f64) -> Result<TriMesh, MoldError> {
    let outer = offset_contour(inner, width)?;
    let n = inner.len() as u32;
    let mut mesh = TriMesh::default();
    // Vertex blocks: inner bottom, outer bottom, inner top, outer top.
    for z in [0.0, height] {
        mesh.vertices.extend(inner.vertices.iter().map(|p| [p[0], p[1], z]));
        mesh.vertices.extend(outer.vertices.iter().map(|p| [p[0], p[1], z]));
    }
    let (ib, ob, it, ot) = (0, n, 2 * n, 3 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        // Outer wall faces out, inner wall faces the hole.
        mesh.triangles.push([ob + i, ob + j, ot + j]);
        mesh.triangles.push([ob + i, ot + j, ot + i]);
        mesh.triangles.push([ib + j, ib + i, it + i]);
        mesh.triangles.push([ib + j, it + i, it + j]);
        // Top faces up, bottom faces down.
        mesh.triangles.push([it + i, ot + i, ot + j]);
        mesh.triangles.push([it + i, ot + j, it + j]);
        mesh.triangles.push([ib + i, ob + j, ob + i]);
        mesh.triangles.push([ib + i, ib + j, ob + j]);
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoldParams {
    pub wall_mm: f64,
    pub clearance_mm: f64,
    pub skin_thickness_mm: f64,
    pub channel_side_mm: f64,
    pub peg_side_mm: f64,
    pub peg_height_mm: f64,
    pub groove_depth_mm: f64,
    pub groove_width_mm: f64,
}

impl Default for MoldParams {
    fn default() -> Self {
        Self {
            wall_mm: 4.0,
            clearance_mm: 0.2,
            skin_thickness_mm: 2.0,
            channel_side_mm: 2.0,
            peg_side_mm: 2.0,
            peg_height_mm: 2.0,
            groove_depth_mm: 1.0,
            groove_width_mm: 1.0,
        }
    }
}

impl MoldParams {
    pub fn validate(&self) -> Result<(), MoldError> {
        let all = [
            ("wall", self.wall_mm),
            ("clearance", self.clearance_mm),
            ("skin thickness", self.skin_thickness_mm),
            ("channel side", self.channel_side_mm),
            ("peg side", self.peg_side_mm),
            ("peg height", self.peg_height_mm),
            ("groove depth", self.groove_depth_mm),
            ("groove width", self.groove_width_mm),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MoldError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.peg_side_mm + 2.0 * self.clearance_mm >= self.wall_mm {
            return Err(MoldError::InvalidParams("alignment holes do not fit inside the wall".into()));
        }
        if self.groove_width_mm >= self.wall_mm {
            return Err(MoldError::InvalidParams("groove wider than the wall".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoldDesign {
    pub skin_solid: TriMesh,
    pub mold_top: TriMesh,
    pub mold_bottom: TriMesh,
    pub params: MoldParams,
    pub inlet: [f64; 2],
    pub outlet: [f64; 2],
    pub peg_centers: [[f64; 2]; 4],
}

/// Skin solid plus both mold halves, in assembly coordinates: the bottom
/// half sits on z = 0 and the parting plane is at `wall + thickness/2`.
pub fn generate_mold(c: &Contour2D, params: &MoldParams) -> Result<MoldDesign, MoldError> {
    params.validate()?;
    let p = params;
    let t = p.skin_thickness_mm;
    let half = t / 2.0;
    let parting = p.wall_mm + half;
    let skin_solid = extrude(c, t)?;

    let (clo, chi) = offset_contour(c, p.wall_mm)?.bounding_box();
    let cavity = extrude(c, half)?;

    let mut bottom = box_mesh([clo[0], clo[1], 0.0], [chi[0], chi[1], parting])?;
    bottom.append(&cavity.translated([0.0, 0.0, p.wall_mm]).inverted());

    let top_z = parting + half + p.wall_mm;
    let mut top = box_mesh([clo[0], clo[1], parting], [chi[0], chi[1], top_z])?;
    top.append(&cavity.translated([0.0, 0.0, parting]).inverted());

    let inset = p.wall_mm / 2.0;
    let peg_centers = [
        [clo[0] + inset, clo[1] + inset],
        [chi[0] - inset, clo[1] + inset],
        [chi[0] - inset, chi[1] - inset],
        [clo[0] + inset, chi[1] - inset],
    ];
    for pc in &peg_centers {
        let r = p.peg_side_mm / 2.0;
        bottom.append(&box_mesh([pc[0] - r, pc[1] - r, parting], [pc[0] + r, pc[1] + r, parting + p.peg_height_mm])?);
        let h = r + p.clearance_mm;
        let hole_top = (parting + p.peg_height_mm + p.clearance_mm).min(top_z - p.clearance_mm);
        top.append(&box_mesh([pc[0] - h, pc[1] - h, parting], [pc[0] + h, pc[1] + h, hole_top])?.inverted());
    }

    let (i, o) = c.diameter_pair();
    let inlet = c.vertices[i];
    let outlet = c.vertices[o];
    let s = p.channel_side_mm / 2.0;
    for at in [inlet, outlet] {
        top.append(&box_mesh([at[0] - s, at[1] - s, parting], [at[0] + s, at[1] + s, top_z])?.inverted());
    }

    // The lip groove rings the cavity edge and reaches past the cavity roof.
    let groove = ring_mesh(c, p.groove_width_mm, half + p.groove_depth_mm)?;
    top.append(&groove.translated([0.0, 0.0, parting]).inverted());

    Ok(MoldDesign { skin_solid, mold_top: top, mold_bottom: bottom, params: *params, inlet, outlet, peg_centers })
}

fn stl_header() -> [u8; 80] {
    let mut h = [0u8; 80];
    let text = STL_HEADER_TEXT.as_bytes();
    h[..text.len()].copy_from_slice(text);
    h
}

/// Binary STL bytes: header, count, then normal + 3 vertices + 2 zero bytes
/// per triangle.
pub fn stl_bytes(mesh: &TriMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.triangles.len());
    out.extend_from_slice(&stl_header());
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for t in &mesh.triangles {
        let normal = mesh.unit_normal(t);
        let corners = t.map(|i| mesh.vertices[i as usize]);
        for v in std::iter::once(normal).chain(corners) {
            for x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

pub fn write_stl(mesh: &TriMesh, path: &Path) -> Result<(), MoldError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&stl_bytes(mesh))?;
    Ok(())
}

/// Triangle count field of a binary STL.
pub fn stl_triangle_count(bytes: &[u8]) -> Option<u32> {
    bytes.get(80..84).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

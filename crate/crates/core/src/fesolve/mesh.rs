//! Triangle meshes and the built-in tapered strip.
//!
//! Text format, one record per line (`#` starts a comment):
//!
//! ```text
//! thickness <t>
//! node <id> <x> <y>
//! tri <id> <n0> <n1> <n2>
//! set <name> <node id> <node id> ...
//! ```
//!
//! Ids are zero-based and must appear in order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strain-displacement matrix of a constant-strain triangle.
pub type BMatrix = SMatrix<f64, 3, 6>;

pub const LEFT: &str = "left";
pub const RIGHT: &str = "right";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub sets: BTreeMap<String, Vec<usize>>,
    pub thickness: f64,
}

impl Mesh {
    pub fn new(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        sets: BTreeMap<String, Vec<usize>>,
        thickness: f64,
    ) -> Result<Self> {
        let m = Self { nodes, triangles, sets, thickness };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thickness > 0.0) {
            return Err(Error::Mesh(format!("thickness {} must be positive", self.thickness)));
        }
        let mut used = vec![false; self.nodes.len()];
        for (e, t) in self.triangles.iter().enumerate() {
            for &n in t {
                if n >= self.nodes.len() {
                    return Err(Error::Mesh(format!("triangle {e} references missing node {n}")));
                }
                used[n] = true;
            }
            if !(self.area(e) > 0.0) {
                return Err(Error::Mesh(format!("triangle {e} has non-positive area {}", self.area(e))));
            }
        }
        if let Some(n) = used.iter().position(|u| !u) {
            return Err(Error::Mesh(format!("node {n} belongs to no triangle")));
        }
        for (name, ids) in &self.sets {
            if let Some(n) = ids.iter().find(|&&n| n >= self.nodes.len()) {
                return Err(Error::Mesh(format!("set {name} references missing node {n}")));
            }
        }
        Ok(())
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Signed area (positive for counter-clockwise node order).
    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.triangles[e].map(|n| self.nodes[n]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// `B` mapping element dofs `(u0, v0, u1, v1, u2, v2)` to
    /// `(eps_xx, eps_yy, gamma_xy)`, and the element area.
    pub fn b_matrix(&self, e: usize) -> (BMatrix, f64) {
        let [p0, p1, p2] = self.triangles[e].map(|n| self.nodes[n]);
        let area = self.area(e);
        let b = [p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]];
        let c = [p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]];
        let mut m = BMatrix::zeros();
        for i in 0..3 {
            m[(0, 2 * i)] = b[i];
            m[(1, 2 * i + 1)] = c[i];
            m[(2, 2 * i)] = c[i];
            m[(2, 2 * i + 1)] = b[i];
        }
        (m / (2.0 * area), area)
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 6] {
        let [a, b, c] = self.triangles[e];
        [2 * a, 2 * a + 1, 2 * b, 2 * b + 1, 2 * c, 2 * c + 1]
    }

    pub fn set(&self, name: &str) -> Result<&[usize]> {
        self.sets.get(name).map(|v| v.as_slice()).ok_or_else(|| Error::Mesh(format!("no node set named {name}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut thickness = None;
        let mut nodes = Vec::new();
        let mut triangles = Vec::new();
        let mut sets = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse(format!("line {}: {m}", ln + 1));
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            let rest: Vec<&str> = it.collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("bad number `{s}`")));
            let idx = |s: &str| s.parse::<usize>().map_err(|_| err(&format!("bad index `{s}`")));
            match key {
                "thickness" if rest.len() == 1 => thickness = Some(num(rest[0])?),
                "node" if rest.len() == 3 => {
                    if idx(rest[0])? != nodes.len() {
                        return Err(err("node ids must be consecutive from 0"));
                    }
                    nodes.push([num(rest[1])?, num(rest[2])?]);
                }
                "tri" if rest.len() == 4 => {
                    if idx(rest[0])? != triangles.len() {
                        return Err(err("triangle ids must be consecutive from 0"));
                    }
                    triangles.push([idx(rest[1])?, idx(rest[2])?, idx(rest[3])?]);
                }
                "set" if !rest.is_empty() => {
                    let ids = rest[1..].iter().map(|s| idx(s)).collect::<Result<Vec<_>>>()?;
                    sets.insert(rest[0].to_string(), ids);
                }
                _ => return Err(err(&format!("unrecognized record `{line}`"))),
            }
        }
        let thickness = thickness.ok_or_else(|| Error::Parse("missing thickness record".into()))?;
        Self::new(nodes, triangles, sets, thickness)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "thickness {:?}", self.thickness);
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "node {i} {:?} {:?}", n[0], n[1]);
        }
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "tri {i} {} {} {}", t[0], t[1], t[2]);
        }
        for (name, ids) in &self.sets {
            let ids: Vec<String> = ids.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(s, "set {name} {}", ids.join(" "));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Strip whose width varies linearly from `width_left` to `width_right`,
/// perforated by circular holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripGeometry {
    pub length: f64,
    pub width_left: f64,
    pub width_right: f64,
    pub thickness: f64,
    pub holes: Vec<Hole>,
    pub nx: usize,
    pub ny: usize,
}

impl Default for StripGeometry {
    fn default() -> Self {
        Self {
            length: 60.0,
            width_left: 20.0,
            width_right: 14.0,
            thickness: 1.0,
            holes: vec![
                Hole { x: 15.0, y: 2.5, radius: 2.5 },
                Hole { x: 30.0, y: -2.0, radius: 2.5 },
                Hole { x: 45.0, y: 1.5, radius: 2.0 },
            ],
            nx: 32,
            ny: 9,
        }
    }
}

impl StripGeometry {
    fn width(&self, x: f64) -> f64 {
        self.width_left + (self.width_right - self.width_left) * x / self.length
    }

    /// Mapped structured mesh with elements inside holes removed and hole
    /// boundary nodes pulled onto the circles where that keeps every
    /// element valid.
    pub fn mesh(&self) -> Result<Mesh> {
        if self.nx == 0 || self.ny == 0 || !(self.length > 0.0) || !(self.width_left > 0.0 && self.width_right > 0.0) {
            return Err(Error::Mesh("degenerate strip geometry".into()));
        }
        let (nx, ny) = (self.nx, self.ny);
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = self.length * i as f64 / nx as f64;
                let w = self.width(x);
                nodes.push([x, -0.5 * w + w * j as f64 / ny as f64]);
            }
        }
        let inside = |p: [f64; 2]| self.holes.iter().position(|h| (p[0] - h.x).hypot(p[1] - h.y) < h.radius);
        let mut tris = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                // alternate diagonals to avoid a directional bias
                let pair = if (i + j) % 2 == 0 { [[a, b, c], [a, c, d]] } else { [[a, b, d], [b, c, d]] };
                for t in pair {
                    let cen = [
                        (nodes[t[0]][0] + nodes[t[1]][0] + nodes[t[2]][0]) / 3.0,
                        (nodes[t[0]][1] + nodes[t[1]][1] + nodes[t[2]][1]) / 3.0,
                    ];
                    if inside(cen).is_none() {
                        tris.push(t);
                    }
                }
            }
        }
        // pull nodes lying inside a hole onto its boundary
        for n in 0..nodes.len() {
            if let Some(h) = inside(nodes[n]) {
                let h = self.holes[h];
                let (dx, dy) = (nodes[n][0] - h.x, nodes[n][1] - h.y);
                let r = dx.hypot(dy);
                if r < 1e-12 {
                    continue;
                }
                let old = nodes[n];
                nodes[n] = [h.x + dx / r * h.radius, h.y + dy / r * h.radius];
                let ok = tris.iter().filter(|t| t.contains(&n)).all(|t| {
                    let [p, q, s] = t.map(|k| nodes[k]);
                    0.5 * ((q[0] - p[0]) * (s[1] - p[1]) - (s[0] - p[0]) * (q[1] - p[1])) > 1e-3
                });
                if !ok {
                    nodes[n] = old;
                }
            }
        }
        // renumber to drop orphans
        let mut map = vec![usize::MAX; nodes.len()];
        let mut kept = Vec::new();
        for t in &tris {
            for &n in t {
                if map[n] == usize::MAX {
                    map[n] = usize::MAX - 1;
                }
            }
        }
        for (n, m) in map.iter_mut().enumerate() {
            if *m != usize::MAX {
                *m = kept.len();
                kept.push(nodes[n]);
            }
        }
        let triangles: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|n| map[n])).collect();
        let edge = |i: usize| -> Vec<usize> { (0..=ny).map(|j| map[id(i, j)]).filter(|&n| n != usize::MAX).collect() };
        let mut sets = BTreeMap::new();
        sets.insert(LEFT.to_string(), edge(0));
        sets.insert(RIGHT.to_string(), edge(nx));
        Mesh::new(kept, triangles, sets, self.thickness)
    }
}

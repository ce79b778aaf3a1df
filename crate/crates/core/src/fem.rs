//! Piecewise-linear finite element recovery maps.
//!
//! A [`Mesh`] is either a sorted interval mesh or a Delaunay triangulation of
//! a planar point cloud. Nodal values become a function through the hat
//! basis, `R[v](y) = sum_j v_j psi_j(y)`, evaluated by [`Interpolant`].
//! Queries outside the covered region (the node interval in 1D, the convex
//! hull in 2D) are rejected rather than extrapolated.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};
use crate::pde_data::Grid;

/// Two nodes closer than this in every coordinate are duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// Smallest barycentric coordinate accepted when locating a query.
pub const LOCATE_TOLERANCE: f64 = -1e-10;

/// An interval mesh over strictly increasing nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh1D {
    /// Sorted node coordinates.
    pub nodes: Vec<f64>,
    /// `order[s]` is the input index of the node at sorted position `s`.
    pub order: Vec<usize>,
    pub lower: f64,
    pub upper: f64,
}

/// A conforming triangulation with counterclockwise triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh2D {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// `[xmin, xmax, ymin, ymax]`.
    pub bounds: [f64; 4],
}

/// A recovery mesh in one or two dimensions.
#[derive(Clone, Debug, PartialEq)]
pub enum Mesh {
    Interval(Mesh1D),
    Triangles(Mesh2D),
}

/// The nonzero hat functions at a point: `value = sum weights[i] * v[nodes[i]]`.
///
/// In 1D the third weight is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisWeights {
    pub nodes: [usize; 3],
    pub weights: [f64; 3],
}

impl BasisWeights {
    /// Applies the weights to nodal values.
    pub fn apply(&self, values: &[f64]) -> f64 {
        (0..3).map(|i| self.weights[i] * values[self.nodes[i]]).sum()
    }
}

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn orient(p: &[[f64; 2]], a: usize, b: usize, c: usize) -> f64 {
    orient2d(coord(p[a]), coord(p[b]), coord(p[c]))
}

fn in_circle(p: &[[f64; 2]], t: [usize; 3], d: usize) -> f64 {
    incircle(coord(p[t[0]]), coord(p[t[1]]), coord(p[t[2]]), coord(p[d]))
}

/// First pair of input indices closer than [`DUPLICATE_TOLERANCE`] in every coordinate.
fn find_duplicate(points: &[[f64; 2]]) -> Option<(usize, usize)> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
    for (s, &i) in idx.iter().enumerate() {
        for &j in &idx[s + 1..] {
            if points[j][0] - points[i][0] > DUPLICATE_TOLERANCE {
                break;
            }
            if (points[j][1] - points[i][1]).abs() <= DUPLICATE_TOLERANCE {
                return Some((i.min(j), i.max(j)));
            }
        }
    }
    None
}

fn bounds_of(points: &[[f64; 2]]) -> [f64; 4] {
    points.iter().fold([f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY], |b, p| {
        [b[0].min(p[0]), b[1].max(p[0]), b[2].min(p[1]), b[3].max(p[1])]
    })
}

/// Sorts the points of an interval mesh.
pub fn build_mesh_1d(points: &[f64]) -> Result<Mesh1D> {
    if points.len() < 2 {
        return Err(Error::Parameter(format!("an interval mesh needs at least 2 points, got {}", points.len())));
    }
    if let Some(i) = points.iter().position(|x| !x.is_finite()) {
        return Err(Error::Data(format!("mesh point {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    for w in order.windows(2) {
        if points[w[1]] - points[w[0]] <= DUPLICATE_TOLERANCE {
            return Err(Error::DuplicatePoints(w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    let nodes: Vec<f64> = order.iter().map(|&i| points[i]).collect();
    Ok(Mesh1D { lower: nodes[0], upper: nodes[nodes.len() - 1], nodes, order })
}

/// Counterclockwise convex hull vertices, excluding points interior to hull edges.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(points[a][1].total_cmp(&points[b][1])));
    if idx.len() < 3 {
        return idx;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let seq: Box<dyn Iterator<Item = &usize>> = if pass == 0 { Box::new(idx.iter()) } else { Box::new(idx.iter().rev()) };
        for &i in seq {
            while hull.len() >= start + 2 && orient(points, hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    hull
}

/// Flips edges until every interior edge is locally Delaunay.
fn legalize(points: &[[f64; 2]], tris: &mut [[usize; 3]]) {
    loop {
        let mut owner: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(3 * tris.len());
        for (t, tri) in tris.iter().enumerate() {
            for e in 0..3 {
                owner.insert((tri[e], tri[(e + 1) % 3]), (t, tri[(e + 2) % 3]));
            }
        }
        let mut flipped = false;
        let mut touched = vec![false; tris.len()];
        for t in 0..tris.len() {
            if touched[t] {
                continue;
            }
            let tri = tris[t];
            for e in 0..3 {
                let (a, b, c) = (tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]);
                let Some(&(u, d)) = owner.get(&(b, a)) else { continue };
                if touched[u] || in_circle(points, tri, d) <= 0.0 {
                    continue;
                }
                tris[t] = [a, d, c];
                tris[u] = [d, b, c];
                touched[t] = true;
                touched[u] = true;
                flipped = true;
                break;
            }
        }
        if !flipped {
            return;
        }
    }
}

/// Delaunay triangulation of a planar point set.
///
/// The convex hull is fanned and legalized, then the remaining points are
/// inserted one at a time by cavity re-triangulation (Bowyer-Watson) using
/// exact orientation and in-circle predicates. Points on hull edges become
/// boundary nodes.
pub fn triangulate_2d(points: &[[f64; 2]]) -> Result<Mesh2D> {
    if points.len() < 3 {
        return Err(Error::Parameter(format!("a triangulation needs at least 3 points, got {}", points.len())));
    }
    if let Some(i) = points.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::Data(format!("mesh point {i} is not finite")));
    }
    if let Some((i, j)) = find_duplicate(points) {
        return Err(Error::DuplicatePoints(i, j));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::Collinear);
    }
    let mut tris: Vec<[usize; 3]> = (1..hull.len() - 1).map(|i| [hull[0], hull[i], hull[i + 1]]).collect();
    legalize(points, &mut tris);
    let mut on_hull = vec![false; points.len()];
    hull.iter().for_each(|&h| on_hull[h] = true);
    for p in (0..points.len()).filter(|&p| !on_hull[p]) {
        let (bad, kept): (Vec<[usize; 3]>, Vec<[usize; 3]>) = tris.iter().partition(|&&t| in_circle(points, t, p) > 0.0);
        if bad.is_empty() {
            return Err(Error::Degenerate(format!("point {p} is not inside any circumcircle")));
        }
        let edges: std::collections::HashSet<(usize, usize)> =
            bad.iter().flat_map(|t| (0..3).map(move |e| (t[e], t[(e + 1) % 3]))).collect();
        tris = kept;
        for &(a, b) in edges.iter().filter(|&&(a, b)| !edges.contains(&(b, a))) {
            let o = orient(points, a, b, p);
            if o > 0.0 {
                tris.push([a, b, p]);
            } else if o < 0.0 {
                return Err(Error::Degenerate(format!("cavity of point {p} is not star-shaped")));
            }
        }
    }
    legalize(points, &mut tris);
    tris.sort_unstable();
    Ok(Mesh2D { nodes: points.to_vec(), triangles: tris, bounds: bounds_of(points) })
}

impl Mesh1D {
    /// Hat-function weights at `x`, with node indices in input order.
    pub fn locate(&self, x: f64) -> Option<BasisWeights> {
        let tol = -LOCATE_TOLERANCE * (self.upper - self.lower);
        if !(x >= self.lower - tol && x <= self.upper + tol) {
            return None;
        }
        let n = self.nodes.len();
        let s = self.nodes.partition_point(|&y| y <= x).clamp(1, n - 1);
        let (x0, x1) = (self.nodes[s - 1], self.nodes[s]);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        Some(BasisWeights { nodes: [self.order[s - 1], self.order[s], self.order[s]], weights: [1.0 - t, t, 0.0] })
    }

    /// Lumped mass weights: half the length of each adjacent element, in input order.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.nodes.len()];
        for s in 0..self.nodes.len() - 1 {
            let h = 0.5 * (self.nodes[s + 1] - self.nodes[s]);
            w[self.order[s]] += h;
            w[self.order[s + 1]] += h;
        }
        w
    }
}

impl Mesh2D {
    /// Builds a mesh from explicit triangles after checking its invariants.
    pub fn from_parts(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some((i, j)) = find_duplicate(&nodes) {
            return Err(Error::DuplicatePoints(i, j));
        }
        let mut used = vec![false; nodes.len()];
        let mut edges = std::collections::HashSet::new();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::Format(format!("triangle {t} references a missing node")));
            }
            if orient(&nodes, tri[0], tri[1], tri[2]) <= 0.0 {
                return Err(Error::Format(format!("triangle {t} is not counterclockwise")));
            }
            for e in 0..3 {
                used[tri[e]] = true;
                if !edges.insert((tri[e], tri[(e + 1) % 3])) {
                    return Err(Error::Format(format!("triangle {t} overlaps another triangle")));
                }
            }
        }
        if let Some(v) = used.iter().position(|&u| !u) {
            return Err(Error::Format(format!("node {v} belongs to no triangle")));
        }
        Ok(Self { bounds: bounds_of(&nodes), nodes, triangles })
    }

    /// Barycentric coordinates of `q` in triangle `t`.
    pub fn barycentric(&self, t: usize, q: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
        let l0 = ((b[1] - c[1]) * (q[0] - c[0]) + (c[0] - b[0]) * (q[1] - c[1])) / det;
        let l1 = ((c[1] - a[1]) * (q[0] - c[0]) + (a[0] - c[0]) * (q[1] - c[1])) / det;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Hat-function weights at `q` from the triangle whose smallest
    /// barycentric coordinate is largest, if that coordinate passes
    /// [`LOCATE_TOLERANCE`].
    pub fn locate(&self, q: [f64; 2]) -> Option<BasisWeights> {
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for t in 0..self.triangles.len() {
            let l = self.barycentric(t, q);
            let m = l[0].min(l[1]).min(l[2]);
            if m >= 0.0 {
                best = Some((m, t, l));
                break;
            }
            if m >= LOCATE_TOLERANCE && best.map_or(true, |b| m > b.0) {
                best = Some((m, t, l));
            }
        }
        best.map(|(_, t, l)| BasisWeights { nodes: self.triangles[t], weights: l })
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Lumped mass weights: a third of the area of each incident triangle.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.nodes.len()];
        for t in 0..self.triangles.len() {
            let a = self.area(t) / 3.0;
            self.triangles[t].iter().for_each(|&v| w[v] += a);
        }
        w
    }
}

impl Mesh {
    /// Interval mesh for a 1D grid, Delaunay triangulation for a 2D grid.
    pub fn from_grid(grid: &Grid) -> Result<Self> {
        match grid.dim() {
            1 => Ok(Mesh::Interval(build_mesh_1d(grid.coords())?)),
            2 => Ok(Mesh::Triangles(triangulate_2d(&grid.points_2d()?)?)),
            d => Err(Error::Dimension(format!("meshes exist in 1 or 2 dimensions, not {d}"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Mesh::Interval(_) => 1,
            Mesh::Triangles(_) => 2,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Mesh::Interval(m) => m.nodes.len(),
            Mesh::Triangles(m) => m.nodes.len(),
        }
    }

    /// Hat-function weights at one point; `index` labels the point in errors.
    pub fn locate(&self, index: usize, point: &[f64]) -> Result<BasisWeights> {
        if point.len() != self.dim() {
            return Err(Error::Dimension(format!("query has {} coordinates, mesh is {}D", point.len(), self.dim())));
        }
        let found = match self {
            Mesh::Interval(m) => m.locate(point[0]),
            Mesh::Triangles(m) => m.locate([point[0], point[1]]),
        };
        found.ok_or_else(|| Error::OutOfDomain { index, point: point.to_vec() })
    }

    /// Hat-function weights at every point of `queries`.
    pub fn basis_weights(&self, queries: &Grid) -> Result<Vec<BasisWeights>> {
        (0..queries.len()).map(|i| self.locate(i, queries.point(i))).collect()
    }

    /// Lumped mass weights in node order.
    pub fn lumped_weights(&self) -> Vec<f64> {
        match self {
            Mesh::Interval(m) => m.lumped_weights(),
            Mesh::Triangles(m) => m.lumped_weights(),
        }
    }

    /// Node coordinates in input order as a grid.
    pub fn node_grid(&self) -> Result<Grid> {
        match self {
            Mesh::Interval(m) => {
                let mut x = vec![0.0; m.nodes.len()];
                m.order.iter().zip(&m.nodes).for_each(|(&i, &v)| x[i] = v);
                Grid::from_points_1d(x)
            }
            Mesh::Triangles(m) => Grid::from_points_2d(&m.nodes),
        }
    }

    /// Writes the mesh as text: a `mesh <dim>` header, a node list, then for
    /// triangulations a triangle index list.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mesh {}", self.dim())?;
        match self {
            Mesh::Interval(m) => {
                let grid = self.node_grid()?;
                writeln!(out, "nodes {}", m.nodes.len())?;
                for x in grid.coords() {
                    writeln!(out, "{x:?}")?;
                }
            }
            Mesh::Triangles(m) => {
                writeln!(out, "nodes {}", m.nodes.len())?;
                for p in &m.nodes {
                    writeln!(out, "{:?} {:?}", p[0], p[1])?;
                }
                writeln!(out, "triangles {}", m.triangles.len())?;
                for t in &m.triangles {
                    writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
                }
            }
        }
        Ok(())
    }

    /// Reads the format produced by [`Mesh::write_text`].
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let mut next = |what: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing {what}")))??;
            Ok(line.split_whitespace().map(str::to_string).collect())
        };
        let header = |fields: Vec<String>, key: &str| -> Result<usize> {
            match fields.as_slice() {
                [k, v] if k == key => v.parse().map_err(|_| Error::Format(format!("bad {key} count {v:?}"))),
                _ => Err(Error::Format(format!("expected `{key} <count>`, found {:?}", fields.join(" ")))),
            }
        };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
        let dim = header(next("header")?, "mesh")?;
        let count = header(next("node count")?, "nodes")?;
        match dim {
            1 => {
                let xs = (0..count)
                    .map(|_| match next("node")?.as_slice() {
                        [x] => num(x),
                        f => Err(Error::Format(format!("expected one coordinate, found {f:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Mesh::Interval(build_mesh_1d(&xs)?))
            }
            2 => {
                let nodes = (0..count)
                    .map(|_| match next("node")?.as_slice() {
                        [x, y] => Ok([num(x)?, num(y)?]),
                        f => Err(Error::Format(format!("expected two coordinates, found {f:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let tcount = header(next("triangle count")?, "triangles")?;
                let index = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Format(format!("bad node index {s:?}"))) };
                let tris = (0..tcount)
                    .map(|_| match next("triangle")?.as_slice() {
                        [a, b, c] => Ok([index(a)?, index(b)?, index(c)?]),
                        f => Err(Error::Format(format!("expected three indices, found {f:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Mesh::Triangles(Mesh2D::from_parts(nodes, tris)?))
            }
            d => Err(Error::Format(format!("unsupported mesh dimension {d}"))),
        }
    }
}

/// Nodal values on a mesh, evaluated as a piecewise-linear function.
#[derive(Clone, Debug)]
pub struct Interpolant<'a> {
    pub mesh: &'a Mesh,
    pub values: Vec<f64>,
}

impl<'a> Interpolant<'a> {
    pub fn new(mesh: &'a Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::Dimension(format!("{} values for {} mesh nodes", values.len(), mesh.node_count())));
        }
        Ok(Self { mesh, values })
    }

    /// Value at a single point.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        Ok(self.mesh.locate(0, point)?.apply(&self.values))
    }

    /// Values at every point of `queries`.
    pub fn interpolate(&self, queries: &Grid) -> Result<Vec<f64>> {
        Ok(self.mesh.basis_weights(queries)?.iter().map(|b| b.apply(&self.values)).collect())
    }
}

//! Point prompts inside a convex polygon.
//!
//! Three strategies are provided:
//!
//! - [`sample_axis_aligned`]: normalized i.i.d. uniform vertex weights. Cheap
//!   but concentrates points toward the centroid.
//! - [`sample_uniform_simplex`]: fan-triangulate, pick a triangle with
//!   probability proportional to its area, then draw a uniform barycentric
//!   point. Uniform over the polygon.
//! - [`sample_adaptive_simplex`]: give every triangle a sample count
//!   proportional to its area, each drawn uniformly in that triangle.
//!
//! Every point `i` of a batch draws from its own ChaCha8 stream (`seed`,
//! stream `i`), so batches are reproducible and independent of generation
//! order.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONVEXITY_TOL: f64 = 1e-9;
const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AxisAligned,
    UniformSimplex,
    AdaptiveSimplex,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "axis_aligned" => Ok(Strategy::AxisAligned),
            "uniform_simplex" => Ok(Strategy::UniformSimplex),
            "adaptive_simplex" => Ok(Strategy::AdaptiveSimplex),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::AxisAligned => "axis_aligned",
            Strategy::UniformSimplex => "uniform_simplex",
            Strategy::AdaptiveSimplex => "adaptive_simplex",
        })
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex polygon with counter-clockwise (positive signed area) vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Vector2<f64>>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Vector2<f64>>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidPolygon("fewer than three vertices"));
        }
        if vertices
            .iter()
            .any(|v| !(v.x.is_finite() && v.y.is_finite()))
        {
            return Err(Error::InvalidPolygon("non-finite vertex"));
        }
        for i in 0..n {
            for j in 0..i {
                if vertices[i] == vertices[j] {
                    return Err(Error::InvalidPolygon("repeated vertex"));
                }
            }
        }
        for i in 0..n {
            let turn = cross(&vertices[i], &vertices[(i + 1) % n], &vertices[(i + 2) % n]);
            if turn < -CONVEXITY_TOL {
                return Err(Error::InvalidPolygon("not convex and counter-clockwise"));
            }
        }
        let poly = ConvexPolygon { vertices };
        if !(poly.signed_area() > 0.0) {
            return Err(Error::InvalidPolygon("non-positive signed area"));
        }
        Ok(poly)
    }

    /// Convex hull of arbitrary points.
    pub fn hull_of(points: &[Vector2<f64>]) -> Result<Self> {
        ConvexPolygon::new(crate::certificates::convex_hull(points))
    }

    /// Regular polygon with `n` vertices on a circle.
    pub fn regular(n: usize, center: Vector2<f64>, radius: f64) -> Result<Self> {
        let verts = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                center + Vector2::new(a.cos(), a.sin()) * radius
            })
            .collect();
        ConvexPolygon::new(verts)
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - a.y * b.x
            })
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Inside-or-on test with all edge half-planes checked against `-1e-9`.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| cross(&self.vertices[i], &self.vertices[(i + 1) % n], p) >= -CONVEXITY_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub c: Vector2<f64>,
}

impl Triangle {
    pub fn area(&self) -> f64 {
        0.5 * cross(&self.a, &self.b, &self.c).abs()
    }

    /// Uniform point from two unit uniforms, folding the upper half of the
    /// unit square back onto the triangle.
    pub fn barycentric_point(&self, mut u1: f64, mut u2: f64) -> Vector2<f64> {
        if u1 + u2 > 1.0 {
            u1 = 1.0 - u1;
            u2 = 1.0 - u2;
        }
        self.a + (self.b - self.a) * u1 + (self.c - self.a) * u2
    }
}

/// Fan decomposition `(v0, v_k, v_{k+1})` into `V - 2` triangles.
pub fn fan_triangulate(poly: &ConvexPolygon) -> Result<Vec<Triangle>> {
    let area = poly.area();
    if area < MIN_AREA {
        return Err(Error::DegeneratePolygon(area));
    }
    let v = poly.vertices();
    Ok((1..v.len() - 1)
        .map(|k| Triangle {
            a: v[0],
            b: v[k],
            c: v[k + 1],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<Vector2<f64>>,
    pub strategy: Strategy,
    pub seed: u64,
}

fn point_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_axis_aligned(poly: &ConvexPolygon, n: usize, seed: u64) -> SampleBatch {
    let verts = poly.vertices();
    let points = (0..n as u64)
        .map(|i| {
            let mut rng = point_rng(seed, i);
            let weights: Vec<f64> = verts.iter().map(|_| rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                // All weights drew exactly zero; fall back to the vertex mean.
                return verts.iter().sum::<Vector2<f64>>() / verts.len() as f64;
            }
            verts
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * (w / total))
                .sum()
        })
        .collect();
    SampleBatch {
        points,
        strategy: Strategy::AxisAligned,
        seed,
    }
}

/// Index of the triangle selected by `u` in `[0, 1)` under area weighting.
pub fn select_triangle(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("at least one triangle");
    let target = u * total;
    cumulative
        .partition_point(|c| *c <= target)
        .min(cumulative.len() - 1)
}

fn cumulative_areas(triangles: &[Triangle]) -> Vec<f64> {
    triangles
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t.area();
            Some(*acc)
        })
        .collect()
}

pub fn sample_uniform_simplex(poly: &ConvexPolygon, n: usize, seed: u64) -> Result<SampleBatch> {
    let triangles = fan_triangulate(poly)?;
    let cumulative = cumulative_areas(&triangles);
    let points = (0..n as u64)
        .map(|i| {
            let mut rng = point_rng(seed, i);
            let k = select_triangle(&cumulative, rng.random::<f64>());
            triangles[k].barycentric_point(rng.random(), rng.random())
        })
        .collect();
    Ok(SampleBatch {
        points,
        strategy: Strategy::UniformSimplex,
        seed,
    })
}

/// Per-triangle sample counts for a given density (samples per unit area).
pub fn adaptive_counts(triangles: &[Triangle], density: f64) -> Vec<usize> {
    triangles
        .iter()
        .map(|t| {
            let area = t.area();
            let n = (density * area).round() as usize;
            if n == 0 && area > 1e-9 {
                1
            } else {
                n
            }
        })
        .collect()
}

pub fn sample_adaptive_simplex(
    poly: &ConvexPolygon,
    density: f64,
    seed: u64,
) -> Result<SampleBatch> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::invalid("density", "must be positive"));
    }
    let triangles = fan_triangulate(poly)?;
    let counts = adaptive_counts(&triangles, density);
    let mut points = Vec::with_capacity(counts.iter().sum());
    let mut index = 0u64;
    for (tri, count) in triangles.iter().zip(counts) {
        for _ in 0..count {
            let mut rng = point_rng(seed, index);
            points.push(tri.barycentric_point(rng.random(), rng.random()));
            index += 1;
        }
    }
    Ok(SampleBatch {
        points,
        strategy: Strategy::AdaptiveSimplex,
        seed,
    })
}

/// Draws about `n` points with `strategy`. Adaptive sampling uses the density
/// `n / area`, so its total is `n` up to per-triangle rounding.
pub fn sample(
    poly: &ConvexPolygon,
    strategy: Strategy,
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::invalid("sample count", "must be positive"));
    }
    match strategy {
        Strategy::AxisAligned => Ok(sample_axis_aligned(poly, n, seed)),
        Strategy::UniformSimplex => sample_uniform_simplex(poly, n, seed),
        Strategy::AdaptiveSimplex => sample_adaptive_simplex(poly, n as f64 / poly.area(), seed),
    }
}

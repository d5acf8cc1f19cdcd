//! Workspace geometry: convex polygonal regions, obstacle slabs and the
//! constraint bundle handed to barrier-pair synthesis.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("region {0}: needs at least three vertices")]
    TooFewVertices(String),
    #[error("region {0}: vertices are not strictly convex in counter-clockwise order")]
    NotConvex(String),
    #[error("equilibrium lies inside obstacle {0}")]
    EquilibriumInsideObstacle(String),
    #[error("invalid constraint bounds: {0}")]
    InvalidBounds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Task,
    Obstacle,
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub kind: RegionKind,
    pub vertices: Vec<[f64; 2]>,
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

impl Region {
    pub fn new(
        id: impl Into<String>,
        kind: RegionKind,
        vertices: Vec<[f64; 2]>,
    ) -> Result<Self, RegionError> {
        let r = Self {
            id: id.into(),
            kind,
            vertices,
        };
        r.validate()?;
        Ok(r)
    }

    /// Axis-aligned square, handy for scenarios and tests.
    pub fn square(id: impl Into<String>, kind: RegionKind, center: [f64; 2], half: f64) -> Self {
        let [cx, cy] = center;
        Self {
            id: id.into(),
            kind,
            vertices: vec![
                [cx - half, cy - half],
                [cx + half, cy - half],
                [cx + half, cy + half],
                [cx - half, cy + half],
            ],
        }
    }

    pub fn validate(&self) -> Result<(), RegionError> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(RegionError::TooFewVertices(self.id.clone()));
        }
        let v = self.points();
        for i in 0..n {
            let e1 = v[(i + 1) % n] - v[i];
            let e2 = v[(i + 2) % n] - v[(i + 1) % n];
            if cross(e1, e2) <= 1e-12 {
                return Err(RegionError::NotConvex(self.id.clone()));
            }
        }
        // a strictly left-turning closed polygon must wind exactly once
        let winding: f64 = (0..n)
            .map(|i| {
                let e1 = v[(i + 1) % n] - v[i];
                let e2 = v[(i + 2) % n] - v[(i + 1) % n];
                cross(e1, e2).atan2(e1.dot(&e2))
            })
            .sum();
        if (winding - 2.0 * std::f64::consts::PI).abs() > 1e-6 {
            return Err(RegionError::NotConvex(self.id.clone()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<Vector2<f64>> {
        self.vertices
            .iter()
            .map(|p| Vector2::new(p[0], p[1]))
            .collect()
    }

    /// Area centroid of the polygon.
    pub fn center(&self) -> Vector2<f64> {
        let v = self.points();
        let n = v.len();
        let (mut area, mut c) = (0.0, Vector2::zeros());
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let w = cross(a, b);
            area += w;
            c += (a + b) * w;
        }
        c / (3.0 * area)
    }

    /// Largest distance from the centroid to a vertex.
    pub fn radius(&self) -> f64 {
        let c = self.center();
        self.points()
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max)
    }

    /// Closed membership (boundary counts as inside).
    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        let v = self.points();
        let n = v.len();
        (0..n).all(|i| {
            let e = v[(i + 1) % n] - v[i];
            cross(e, x - v[i]) >= -1e-12 * e.norm()
        })
    }

    pub fn closest_boundary_point(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let v = self.points();
        let n = v.len();
        let mut best = v[0];
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let p = closest_on_segment(v[i], v[(i + 1) % n], x);
            let d = (p - x).norm_squared();
            if d < best_d {
                best_d = d;
                best = p;
            }
        }
        best
    }

    pub fn distance_to_boundary(&self, x: &Vector2<f64>) -> f64 {
        (self.closest_boundary_point(x) - x).norm()
    }

    /// `per_edge` equally spaced points on every edge, each vertex once.
    pub fn edge_samples(&self, per_edge: usize) -> Vec<Vector2<f64>> {
        let per_edge = per_edge.max(2);
        let v = self.points();
        let n = v.len();
        let mut out = Vec::with_capacity(n * (per_edge - 1));
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            for k in 0..per_edge - 1 {
                let t = k as f64 / (per_edge - 1) as f64;
                out.push(a + (b - a) * t);
            }
        }
        out
    }
}

pub fn closest_on_segment(a: Vector2<f64>, b: Vector2<f64>, x: &Vector2<f64>) -> Vector2<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let t = ((x - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// `{x̃ : |normal·x̃| < half_width}` around an equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub region_id: String,
    pub normal: [f64; 2],
    pub half_width: f64,
}

impl Slab {
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(self.normal[0], self.normal[1])
    }

    pub fn contains_offset(&self, dx: &Vector2<f64>) -> bool {
        self.normal().dot(dx).abs() < self.half_width
    }
}

/// Slab through the nearest point of `r`, centered at `x_e`.
pub fn build_slab(x_e: &Vector2<f64>, r: &Region) -> Result<Slab, RegionError> {
    if r.contains(x_e) {
        return Err(RegionError::EquilibriumInsideObstacle(r.id.clone()));
    }
    let p = r.closest_boundary_point(x_e);
    let d = p - x_e;
    let half_width = d.norm();
    let normal = d / half_width;
    Ok(Slab {
        region_id: r.id.clone(),
        normal: [normal.x, normal.y],
        half_width,
    })
}

/// Box limits of the local state space, input space and human-force disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    /// Workspace displacement half-widths (m), one per workspace axis.
    pub x_bounds: DVector<f64>,
    /// Joint-velocity half-widths (rad/s).
    pub qd_bounds: DVector<f64>,
    /// Joint-displacement half-widths (rad); these also size the LDI box.
    pub dq_bounds: DVector<f64>,
    pub u_bounds: DVector<f64>,
    pub w_bar: f64,
}

impl Limits {
    pub fn validate(&self) -> Result<(), RegionError> {
        let ok = self
            .x_bounds
            .iter()
            .chain(self.qd_bounds.iter())
            .chain(self.dq_bounds.iter())
            .chain(self.u_bounds.iter())
            .chain(std::iter::once(&self.w_bar))
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(RegionError::InvalidBounds(
                "all bounds must be strictly positive".into(),
            ));
        }
        if self.qd_bounds.len() != self.u_bounds.len()
            || self.dq_bounds.len() != self.u_bounds.len()
        {
            return Err(RegionError::InvalidBounds(
                "joint bound dimensions differ".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub slabs: Vec<Slab>,
    pub limits: Limits,
}

impl ConstraintSet {
    pub fn build(
        x_e: &Vector2<f64>,
        obstacles: &[&Region],
        limits: &Limits,
    ) -> Result<Self, RegionError> {
        limits.validate()?;
        let slabs = obstacles
            .iter()
            .map(|r| build_slab(x_e, r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            slabs,
            limits: limits.clone(),
        })
    }
}

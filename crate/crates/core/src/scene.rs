//! Obstacle scenes built from spheres, axis-aligned boxes and vertical
//! cylinders, with exact distance queries and seeded procedural generation.

use crate::error::{Error, Result};
use crate::math::{mat3_identity, Mat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
    /// Axis along world `z`; `center` is at mid-height.
    Cylinder {
        center: Vec3,
        radius: f64,
        height: f64,
    },
}

/// Result of a closest-surface query against one primitive (or a scene).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceQuery {
    /// Signed distance, negative inside.
    pub distance: f64,
    /// Unit vector from the query point toward the closest surface point.
    pub direction: Vec3,
    /// Jacobian of `direction` with respect to the query point.
    pub direction_jacobian: Mat3,
}

impl SurfaceQuery {
    /// Gradient of the signed distance with respect to the query point.
    pub fn distance_gradient(&self) -> Vec3 {
        if self.distance < 0.0 {
            self.direction
        } else {
            -self.direction
        }
    }

    fn empty() -> Self {
        SurfaceQuery {
            distance: f64::INFINITY,
            direction: Vec3::ZERO,
            direction_jacobian: [[0.0; 3]; 3],
        }
    }
}

impl Primitive {
    pub fn center(&self) -> Vec3 {
        match *self {
            Primitive::Sphere { center, .. }
            | Primitive::Box { center, .. }
            | Primitive::Cylinder { center, .. } => center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius, .. } => radius > 0.0,
            Primitive::Box { half_extents: h, .. } => h.x > 0.0 && h.y > 0.0 && h.z > 0.0,
            Primitive::Cylinder { radius, height, .. } => radius > 0.0 && height > 0.0,
        };
        if !ok || !self.center().is_finite() {
            return Err(Error::contract(format!(
                "primitive sizes must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let (c, h) = match *self {
            Primitive::Sphere { center, radius } => (center, Vec3::new(radius, radius, radius)),
            Primitive::Box {
                center,
                half_extents,
            } => (center, half_extents),
            Primitive::Cylinder {
                center,
                radius,
                height,
            } => (center, Vec3::new(radius, radius, 0.5 * height)),
        };
        (c - h, c + h)
    }

    /// Closest surface point, its Jacobian with respect to the query point,
    /// and whether the query point is strictly inside.
    fn closest_point(&self, p: Vec3) -> (Vec3, Mat3, bool) {
        match *self {
            Primitive::Sphere { center, radius } => {
                let q = p - center;
                let r = q.norm();
                if r == 0.0 {
                    return (center + Vec3::new(0.0, 0.0, radius), [[0.0; 3]; 3], true);
                }
                let u = q * (1.0 / r);
                let s = radius / r;
                let mut j = [[0.0; 3]; 3];
                for (a, row) in j.iter_mut().enumerate() {
                    for (b, v) in row.iter_mut().enumerate() {
                        let id = if a == b { 1.0 } else { 0.0 };
                        *v = s * (id - u[a] * u[b]);
                    }
                }
                (center + u * radius, j, r < radius)
            }
            Primitive::Box {
                center,
                half_extents: h,
            } => {
                let q = p - center;
                let inside = q.x.abs() < h.x && q.y.abs() < h.y && q.z.abs() < h.z;
                if inside {
                    // push out along the axis with the least slack
                    let slack = [h.x - q.x.abs(), h.y - q.y.abs(), h.z - q.z.abs()];
                    let mut axis = 0;
                    for i in 1..3 {
                        if slack[i] < slack[axis] {
                            axis = i;
                        }
                    }
                    let mut cp = q.to_array();
                    let hh = h.to_array();
                    cp[axis] = if q[axis] >= 0.0 { hh[axis] } else { -hh[axis] };
                    let mut j = mat3_identity();
                    j[axis][axis] = 0.0;
                    (center + Vec3::from(cp), j, true)
                } else {
                    let cp = Vec3::new(
                        q.x.clamp(-h.x, h.x),
                        q.y.clamp(-h.y, h.y),
                        q.z.clamp(-h.z, h.z),
                    );
                    let mut j = [[0.0; 3]; 3];
                    for i in 0..3 {
                        j[i][i] = if q[i].abs() < h[i] { 1.0 } else { 0.0 };
                    }
                    (center + cp, j, false)
                }
            }
            Primitive::Cylinder {
                center,
                radius,
                height,
            } => {
                let q = p - center;
                let hz = 0.5 * height;
                let rho = q.norm_xy();
                let dr = rho - radius;
                let dz = q.z.abs() - hz;
                let mut j = [[0.0; 3]; 3];
                if dr < 0.0 && dz < 0.0 {
                    if dr > dz {
                        let (ux, uy) = if rho > 0.0 {
                            (q.x / rho, q.y / rho)
                        } else {
                            (1.0, 0.0)
                        };
                        if rho > 0.0 {
                            let s = radius / rho;
                            j[0][0] = s * (1.0 - ux * ux);
                            j[0][1] = -s * ux * uy;
                            j[1][0] = -s * ux * uy;
                            j[1][1] = s * (1.0 - uy * uy);
                        }
                        j[2][2] = 1.0;
                        (center + Vec3::new(ux * radius, uy * radius, q.z), j, true)
                    } else {
                        j[0][0] = 1.0;
                        j[1][1] = 1.0;
                        let z = if q.z >= 0.0 { hz } else { -hz };
                        (center + Vec3::new(q.x, q.y, z), j, true)
                    }
                } else {
                    let (cx, cy) = if rho > radius {
                        let s = radius / rho;
                        let (ux, uy) = (q.x / rho, q.y / rho);
                        j[0][0] = s * (1.0 - ux * ux);
                        j[0][1] = -s * ux * uy;
                        j[1][0] = -s * ux * uy;
                        j[1][1] = s * (1.0 - uy * uy);
                        (q.x * s, q.y * s)
                    } else {
                        j[0][0] = 1.0;
                        j[1][1] = 1.0;
                        (q.x, q.y)
                    };
                    let cz = if q.z.abs() < hz {
                        j[2][2] = 1.0;
                        q.z
                    } else {
                        q.z.signum() * hz
                    };
                    (center + Vec3::new(cx, cy, cz), j, false)
                }
            }
        }
    }

    /// Signed distance only; cheaper than [`Primitive::query`].
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
            Primitive::Box {
                center,
                half_extents: h,
            } => {
                let q = p - center;
                let d = Vec3::new(q.x.abs() - h.x, q.y.abs() - h.y, q.z.abs() - h.z);
                let outside = d.max(Vec3::ZERO).norm();
                let inside = d.x.max(d.y).max(d.z).min(0.0);
                outside + inside
            }
            Primitive::Cylinder {
                center,
                radius,
                height,
            } => {
                let q = p - center;
                let dr = q.norm_xy() - radius;
                let dz = q.z.abs() - 0.5 * height;
                dr.max(0.0).hypot(dz.max(0.0)) + dr.max(dz).min(0.0)
            }
        }
    }

    pub fn query(&self, p: Vec3) -> SurfaceQuery {
        let (cp, jcp, inside) = self.closest_point(p);
        surface_from_closest(p, cp, jcp, inside, || self.outward_normal_at(cp))
    }

    fn outward_normal_at(&self, cp: Vec3) -> Vec3 {
        match *self {
            Primitive::Sphere { center, .. } => {
                let q = cp - center;
                let n = q.norm();
                if n > 0.0 {
                    q * (1.0 / n)
                } else {
                    Vec3::new(0.0, 0.0, 1.0)
                }
            }
            Primitive::Box {
                center,
                half_extents: h,
            } => {
                let q = cp - center;
                let r = [q.x.abs() / h.x, q.y.abs() / h.y, q.z.abs() / h.z];
                let mut axis = 0;
                for i in 1..3 {
                    if r[i] > r[axis] {
                        axis = i;
                    }
                }
                let mut n = [0.0; 3];
                n[axis] = q[axis].signum();
                Vec3::from(n)
            }
            Primitive::Cylinder {
                center,
                radius,
                height,
            } => {
                let q = cp - center;
                let rr = q.norm_xy() / radius;
                let zz = q.z.abs() / (0.5 * height);
                if zz >= rr {
                    Vec3::new(0.0, 0.0, q.z.signum())
                } else {
                    Vec3::new(q.x, q.y, 0.0) * (1.0 / q.norm_xy())
                }
            }
        }
    }

    /// Smallest ray parameter `t > 0` with `origin + t * dir` on the surface,
    /// or infinity. `dir` need not be normalized.
    #[inline]
    pub fn intersect(&self, o: Vec3, d: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => ray_sphere(o, d, center, radius),
            Primitive::Box {
                center,
                half_extents: h,
            } => intersect_box(o, d, center - h, center + h),
            Primitive::Cylinder {
                center,
                radius,
                height,
            } => ray_cylinder(o, d, center, radius, height),
        }
    }
}

#[inline]
pub(crate) fn ray_sphere(o: Vec3, d: Vec3, center: Vec3, radius: f64) -> f64 {
    let oc = o - center;
    let a = d.dot(d);
    let b = d.dot(oc);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let t = (-b - disc.sqrt()) / a;
    if t > 0.0 {
        t
    } else {
        f64::INFINITY
    }
}

/// Upright cylinder: side wall plus the cap facing the origin.
#[inline]
pub(crate) fn ray_cylinder(o: Vec3, d: Vec3, center: Vec3, radius: f64, height: f64) -> f64 {
    let zmin = center.z - 0.5 * height;
    let zmax = center.z + 0.5 * height;
    let ox = o.x - center.x;
    let oy = o.y - center.y;
    let mut best = f64::INFINITY;
    let a = d.x * d.x + d.y * d.y;
    if a > 0.0 {
        let b = ox * d.x + oy * d.y;
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / a;
            if t > 0.0 {
                let z = o.z + t * d.z;
                if z >= zmin && z <= zmax {
                    best = t;
                }
            }
        }
    }
    if d.z != 0.0 {
        let cap = if o.z > zmax {
            Some(zmax)
        } else if o.z < zmin {
            Some(zmin)
        } else {
            None
        };
        if let Some(zc) = cap {
            let t = (zc - o.z) / d.z;
            if t > 0.0 && t < best {
                let x = ox + t * d.x;
                let y = oy + t * d.y;
                if x * x + y * y <= radius * radius {
                    best = t;
                }
            }
        }
    }
    best
}

#[inline]
fn slab(o: f64, d: f64, lo: f64, hi: f64) -> (f64, f64) {
    if d == 0.0 {
        if o < lo || o > hi {
            (f64::INFINITY, f64::NEG_INFINITY)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        }
    } else {
        let (a, b) = ((lo - o) / d, (hi - o) / d);
        if d > 0.0 {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// Slab test. Entry distances are computed as `(bound - o) / d` so the
/// returned value is exactly the hit plane's ray parameter.
#[inline]
pub(crate) fn intersect_box(o: Vec3, d: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let (x0, x1) = slab(o.x, d.x, lo.x, hi.x);
    let (y0, y1) = slab(o.y, d.y, lo.y, hi.y);
    let (z0, z1) = slab(o.z, d.z, lo.z, hi.z);
    let tmin = x0.max(y0).max(z0);
    let tmax = x1.min(y1).min(z1);
    if tmin <= tmax && tmin > 0.0 {
        tmin
    } else {
        f64::INFINITY
    }
}

fn surface_from_closest(
    p: Vec3,
    cp: Vec3,
    jcp: Mat3,
    inside: bool,
    normal: impl FnOnce() -> Vec3,
) -> SurfaceQuery {
    let w = cp - p;
    let len = w.norm();
    if len == 0.0 {
        // on the surface: point into the obstacle
        return SurfaceQuery {
            distance: 0.0,
            direction: -normal(),
            direction_jacobian: [[0.0; 3]; 3],
        };
    }
    let dir = w * (1.0 / len);
    // d(dir)/dp = (I - dir dir^T) / |w| * (dcp/dp - I)
    let mut jac = [[0.0; 3]; 3];
    for (a, row) in jac.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..3 {
                let proj = if a == k { 1.0 } else { 0.0 } - dir[a] * dir[k];
                let m = jcp[k][b] - if k == b { 1.0 } else { 0.0 };
                acc += proj * m;
            }
            *v = acc / len;
        }
    }
    SurfaceQuery {
        distance: if inside { -len } else { len },
        direction: dir,
        direction_jacobian: jac,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn inflate(&self, m: f64) -> Aabb {
        let d = Vec3::new(m, m, m);
        Aabb::new(self.min - d, self.max + d)
    }

    pub fn area_xy(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }
}

/// Immutable obstacle environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub bounds: Aabb,
    pub ground_plane_z: Option<f64>,
    /// Generator seed, when the scene came from [`generate_scene`].
    pub seed: Option<u64>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>, bounds: Aabb, ground_plane_z: Option<f64>) -> Result<Self> {
        let s = Scene {
            primitives,
            bounds,
            ground_plane_z,
            seed: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn empty(bounds: Aabb) -> Self {
        Scene {
            primitives: Vec::new(),
            bounds,
            ground_plane_z: None,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate()?;
            if !self.bounds.contains(p.center()) {
                return Err(Error::contract(format!(
                    "primitive #{i} center {:?} outside scene bounds",
                    p.center()
                )));
            }
        }
        Ok(())
    }

    /// Closest obstacle surface (including the ground plane when present).
    pub fn query(&self, p: Vec3) -> SurfaceQuery {
        let prim = self.query_primitives(p);
        let ground = self.query_ground(p);
        if ground.distance < prim.distance {
            ground
        } else {
            prim
        }
    }

    /// Closest primitive surface, ignoring the ground plane.
    pub fn query_primitives(&self, p: Vec3) -> SurfaceQuery {
        let mut best = SurfaceQuery::empty();
        for prim in &self.primitives {
            // cheap reject before computing the Jacobian
            if prim.signed_distance(p) >= best.distance {
                continue;
            }
            let q = prim.query(p);
            if q.distance < best.distance {
                best = q;
            }
        }
        best
    }

    /// Height above the ground plane, or an infinite distance without one.
    pub fn query_ground(&self, p: Vec3) -> SurfaceQuery {
        match self.ground_plane_z {
            Some(gz) => {
                let d = p.z - gz;
                SurfaceQuery {
                    distance: d,
                    direction: Vec3::new(0.0, 0.0, if d >= 0.0 { -1.0 } else { 1.0 }),
                    direction_jacobian: [[0.0; 3]; 3],
                }
            }
            None => SurfaceQuery::empty(),
        }
    }

    /// Index of a primitive strictly containing `p`, if any.
    pub fn containing_primitive(&self, p: Vec3) -> Option<usize> {
        self.primitives
            .iter()
            .position(|prim| prim.signed_distance(p) < 0.0)
    }
}

/// Distance from `point` to the nearest obstacle surface (negative inside)
/// and the unit direction toward it. An empty scene yields `(inf, 0)`.
pub fn closest_distance(scene: &Scene, point: Vec3) -> (f64, Vec3) {
    let q = scene.query(point);
    (q.distance, q.direction)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Expected obstacles per square metre of ground area.
    pub density: f64,
    /// World extent along x, y, z (m); the world is centered on the origin in
    /// x/y and starts at the ground in z.
    pub world_size: [f64; 3],
    pub ground_plane: bool,
    /// Radius range for spheres and cylinders, and half-width range for boxes.
    pub radius_range: [f64; 2],
    pub cylinder_height_range: [f64; 2],
    pub box_half_height_range: [f64; 2],
    pub sphere_z_range: [f64; 2],
    /// Relative weights of sphere, box, cylinder.
    pub kind_weights: [f64; 3],
    pub start: Vec3,
    pub goal: Vec3,
    pub clearance_radius: f64,
    pub max_retries: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            density: 0.08,
            world_size: [40.0, 40.0, 5.0],
            ground_plane: true,
            radius_range: [0.3, 1.5],
            cylinder_height_range: [3.0, 5.0],
            box_half_height_range: [1.0, 2.5],
            sphere_z_range: [0.5, 3.0],
            kind_weights: [0.2, 0.2, 0.6],
            start: Vec3::new(-17.0, 0.0, 1.5),
            goal: Vec3::new(17.0, 0.0, 1.5),
            clearance_radius: 2.0,
            max_retries: 1000,
        }
    }
}

impl GenConfig {
    pub fn bounds(&self) -> Aabb {
        let [sx, sy, sz] = self.world_size;
        Aabb::new(Vec3::new(-0.5 * sx, -0.5 * sy, 0.0), Vec3::new(0.5 * sx, 0.5 * sy, sz))
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite();
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(Error::Config("density must be >= 0".into()));
        }
        if self.world_size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("world_size must be positive".into()));
        }
        for (name, r) in [
            ("radius_range", self.radius_range),
            ("cylinder_height_range", self.cylinder_height_range),
            ("box_half_height_range", self.box_half_height_range),
            ("sphere_z_range", self.sphere_z_range),
        ] {
            if !range_ok(r) {
                return Err(Error::Config(format!("{name} must be a positive [min, max]")));
            }
        }
        if self.kind_weights.iter().any(|&w| w < 0.0) || self.kind_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("kind_weights must be nonnegative with positive sum".into()));
        }
        if !(self.clearance_radius > 0.0) {
            return Err(Error::Config("clearance_radius must be > 0".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Generates a scene deterministically from `seed`. The primitive count is
/// Poisson distributed with mean `density * ground area`; each primitive is
/// placed uniformly and re-drawn until it clears the start and goal spheres.
pub fn generate_scene(seed: u64, cfg: &GenConfig) -> Result<Scene> {
    cfg.validate()?;
    let bounds = cfg.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = cfg.density * bounds.area_xy();
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| Error::Generation(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let wsum: f64 = cfg.kind_weights.iter().sum();
    let ground = bounds.min.z;
    let top = bounds.max.z;
    let mut primitives = Vec::with_capacity(count);
    for i in 0..count {
        let mut placed = None;
        for _ in 0..cfg.max_retries {
            let x = rng.random_range(bounds.min.x..bounds.max.x);
            let y = rng.random_range(bounds.min.y..bounds.max.y);
            let pick = rng.random_range(0.0..wsum);
            let radius = uniform(&mut rng, cfg.radius_range);
            let prim = if pick < cfg.kind_weights[0] {
                let z = uniform(&mut rng, cfg.sphere_z_range).min(top);
                Primitive::Sphere {
                    center: Vec3::new(x, y, z),
                    radius,
                }
            } else if pick < cfg.kind_weights[0] + cfg.kind_weights[1] {
                let hy = uniform(&mut rng, cfg.radius_range);
                let hz = uniform(&mut rng, cfg.box_half_height_range).min(0.5 * (top - ground));
                Primitive::Box {
                    center: Vec3::new(x, y, ground + hz),
                    half_extents: Vec3::new(radius, hy, hz),
                }
            } else {
                let h = uniform(&mut rng, cfg.cylinder_height_range).min(top - ground);
                Primitive::Cylinder {
                    center: Vec3::new(x, y, ground + 0.5 * h),
                    radius,
                    height: h,
                }
            };
            let clear = prim.signed_distance(cfg.start) > cfg.clearance_radius
                && prim.signed_distance(cfg.goal) > cfg.clearance_radius;
            if clear {
                placed = Some(prim);
                break;
            }
        }
        match placed {
            Some(p) => primitives.push(p),
            None => {
                return Err(Error::Generation(format!(
                    "primitive #{i} exceeded {} placement retries",
                    cfg.max_retries
                )))
            }
        }
    }
    Ok(Scene {
        primitives,
        bounds,
        ground_plane_z: cfg.ground_plane.then_some(ground),
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bounds() -> Aabb {
        Aabb::new(Vec3::new(-20.0, -20.0, -20.0), Vec3::new(20.0, 20.0, 20.0))
    }

    /// Closest distance by dense sampling of the primitive's surface.
    fn sampled_surface_distance(prim: &Primitive, p: Vec3, n: usize) -> (f64, Vec3) {
        let mut best = (f64::INFINITY, Vec3::ZERO);
        let mut consider = |s: Vec3| {
            let d = (s - p).norm();
            if d < best.0 {
                best = (d, (s - p) * (1.0 / d));
            }
        };
        match *prim {
            Primitive::Box {
                center,
                half_extents: h,
            } => {
                for axis in 0..3 {
                    for sign in [-1.0, 1.0] {
                        for a in 0..=n {
                            for b in 0..=n {
                                let u = -1.0 + 2.0 * a as f64 / n as f64;
                                let v = -1.0 + 2.0 * b as f64 / n as f64;
                                let mut q = [0.0; 3];
                                q[axis] = sign;
                                q[(axis + 1) % 3] = u;
                                q[(axis + 2) % 3] = v;
                                consider(center + Vec3::new(q[0] * h.x, q[1] * h.y, q[2] * h.z));
                            }
                        }
                    }
                }
            }
            _ => unimplemented!(),
        }
        best
    }

    #[test]
    fn sphere_distance_along_axis() {
        let s = Scene::new(
            vec![Primitive::Sphere {
                center: Vec3::new(0.0, 0.0, 5.0),
                radius: 1.0,
            }],
            bounds(),
            None,
        )
        .unwrap();
        let (d, dir) = closest_distance(&s, Vec3::ZERO);
        assert_eq!(d, 4.0);
        assert_eq!(dir, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn empty_scene_distance_is_infinite() {
        let (d, dir) = closest_distance(&Scene::empty(bounds()), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(d, f64::INFINITY);
        assert_eq!(dir, Vec3::ZERO);
    }

    #[test]
    fn box_distance_matches_surface_sampling() {
        let prim = Primitive::Box {
            center: Vec3::ZERO,
            half_extents: Vec3::new(1.0, 1.0, 1.0),
        };
        let s = Scene::new(vec![prim], bounds(), None).unwrap();
        let (d, dir) = closest_distance(&s, Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(d, 1.0);
        assert_eq!(dir, Vec3::new(-1.0, 0.0, 0.0));
        let (ds, dirs) = sampled_surface_distance(&prim, Vec3::new(2.0, 0.0, 0.0), 200);
        assert!((d - ds).abs() < 1e-6);
        assert!((dir - dirs).norm() < 1e-6);
        // off-axis point against a grid that contains the exact closest point
        let p = Vec3::new(1.5, 1.6, -0.4);
        let (d2, dir2) = closest_distance(&s, p);
        let (ds2, dirs2) = sampled_surface_distance(&prim, p, 200);
        assert!((d2 - ds2).abs() < 1e-6, "{d2} vs {ds2}");
        assert!((dir2 - dirs2).norm() < 1e-6);
    }

    #[test]
    fn inside_distances_are_negative() {
        let prims = [
            Primitive::Sphere {
                center: Vec3::ZERO,
                radius: 2.0,
            },
            Primitive::Box {
                center: Vec3::ZERO,
                half_extents: Vec3::new(2.0, 3.0, 4.0),
            },
            Primitive::Cylinder {
                center: Vec3::ZERO,
                radius: 2.0,
                height: 6.0,
            },
        ];
        for prim in prims {
            let q = prim.query(Vec3::new(0.5, 0.0, 0.0));
            assert!((q.distance + 1.5).abs() < 1e-12, "{prim:?} {q:?}");
            assert!((q.direction - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
            assert!((prim.signed_distance(Vec3::new(0.5, 0.0, 0.0)) + 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn cylinder_cap_and_rim() {
        let c = Primitive::Cylinder {
            center: Vec3::new(0.0, 0.0, 1.0),
            radius: 1.0,
            height: 2.0,
        };
        assert!((c.signed_distance(Vec3::new(0.0, 0.0, 3.0)) - 1.0).abs() < 1e-12);
        assert!((c.signed_distance(Vec3::new(2.0, 0.0, 3.0)) - 2f64.sqrt()).abs() < 1e-12);
        let q = c.query(Vec3::new(2.0, 0.0, 3.0));
        assert!((q.distance - 2f64.sqrt()).abs() < 1e-12);
        // looking straight down onto the cap
        let t = c.intersect(Vec3::new(0.2, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0));
        assert!((t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_clears_endpoints() {
        let cfg = GenConfig::default();
        let a = generate_scene(7, &cfg).unwrap();
        let b = generate_scene(7, &cfg).unwrap();
        assert_eq!(a, b);
        for p in &a.primitives {
            assert!(p.signed_distance(cfg.start) > cfg.clearance_radius);
            assert!(p.signed_distance(cfg.goal) > cfg.clearance_radius);
            assert!(a.bounds.contains(p.center()));
        }
        let zero = GenConfig {
            density: 0.0,
            ..cfg
        };
        assert!(generate_scene(1, &zero).unwrap().primitives.is_empty());
    }

    #[test]
    fn generation_count_follows_poisson_law() {
        let cfg = GenConfig {
            density: 0.1,
            ..GenConfig::default()
        };
        // mean 160, std sqrt(160) ~ 12.65
        let counts: Vec<f64> = (0..100)
            .map(|s| generate_scene(s, &cfg).unwrap().primitives.len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / 100.0;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 99.0;
        let within = counts.iter().filter(|c| (**c - 160.0).abs() <= 26.0).count();
        assert!((mean - 160.0).abs() < 3.0 * 12.65 / 10.0, "mean {mean}");
        // chi-square(99) 0.1%..99.9% quantiles are ~ 63.0 and 148.2
        let stat = 99.0 * var / 160.0;
        assert!(stat > 63.0 && stat < 148.2, "variance {var}");
        assert!(within >= 90, "{within} of 100 seeds within 160 +- 26");
    }

    #[test]
    fn generation_fails_when_clearance_is_impossible() {
        let cfg = GenConfig {
            density: 0.01,
            clearance_radius: 100.0,
            max_retries: 10,
            ..GenConfig::default()
        };
        assert!(matches!(generate_scene(3, &cfg), Err(Error::Generation(_))));
        assert!(GenConfig {
            radius_range: [0.0, 1.0],
            ..GenConfig::default()
        }
        .validate()
        .is_err());
    }

    fn arb_prim() -> impl Strategy<Value = Primitive> {
        let v = || (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z));
        prop_oneof![
            (v(), 0.2..2.0f64).prop_map(|(center, radius)| Primitive::Sphere { center, radius }),
            (v(), 0.2..2.0f64, 0.2..2.0f64, 0.2..2.0f64).prop_map(|(center, a, b, c)| Primitive::Box {
                center,
                half_extents: Vec3::new(a, b, c)
            }),
            (v(), 0.2..2.0f64, 0.4..4.0f64).prop_map(|(center, radius, height)| Primitive::Cylinder {
                center,
                radius,
                height
            }),
        ]
    }

    proptest! {
        #[test]
        fn distance_is_one_lipschitz(prims in proptest::collection::vec(arb_prim(), 1..5),
                                     p in (-6.0..6.0f64, -6.0..6.0f64, -6.0..6.0f64),
                                     q in (-6.0..6.0f64, -6.0..6.0f64, -6.0..6.0f64)) {
            let s = Scene::new(prims, bounds(), None).unwrap();
            let p = Vec3::new(p.0, p.1, p.2);
            let q = Vec3::new(q.0, q.1, q.2);
            let (dp, _) = closest_distance(&s, p);
            let (dq, _) = closest_distance(&s, q);
            prop_assert!((dp - dq).abs() <= (p - q).norm() + 1e-9);
        }

        #[test]
        fn query_agrees_with_signed_distance(prim in arb_prim(),
                                             p in (-6.0..6.0f64, -6.0..6.0f64, -6.0..6.0f64)) {
            let p = Vec3::new(p.0, p.1, p.2);
            let q = prim.query(p);
            prop_assert!((q.distance - prim.signed_distance(p)).abs() < 1e-9);
            // moving to the reported surface point lands on the surface
            let on = p + q.direction * q.distance.abs();
            prop_assert!(prim.signed_distance(on).abs() < 1e-9);
        }

        #[test]
        fn direction_jacobian_matches_finite_differences(prim in arb_prim(),
                p in (-6.0..6.0f64, -6.0..6.0f64, -6.0..6.0f64)) {
            let p = Vec3::new(p.0, p.1, p.2);
            let q = prim.query(p);
            prop_assume!(q.distance.abs() > 1e-2);
            let h = 1e-6;
            for b in 0..3 {
                let mut e = [0.0; 3];
                e[b] = h;
                let qp = prim.query(p + Vec3::from(e));
                let qm = prim.query(p - Vec3::from(e));
                // skip points sitting on a face/region switch
                prop_assume!((qp.direction - qm.direction).norm() < 1e-3);
                let g = q.distance_gradient();
                let fd_d = (qp.distance - qm.distance) / (2.0 * h);
                prop_assert!((fd_d - g[b]).abs() < 1e-5);
                for a in 0..3 {
                    let fd = (qp.direction[a] - qm.direction[a]) / (2.0 * h);
                    prop_assert!((fd - q.direction_jacobian[a][b]).abs() < 1e-4,
                        "a={} b={} fd={} an={}", a, b, fd, q.direction_jacobian[a][b]);
                }
            }
        }
    }
}

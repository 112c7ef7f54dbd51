//! Ray-traced depth images.

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::{intersect_box, ray_cylinder, ray_sphere, Primitive, Scene};

/// Per-pixel optical-axis depth in metres, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub values: Vec<f32>,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl DepthImage {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.intrinsics.width + col]
    }

    /// Uniform depth image, mostly useful for tests and the analytic flow.
    pub fn uniform(intrinsics: CameraIntrinsics, pose: CameraPose, depth: f32) -> Self {
        DepthImage {
            values: vec![depth; intrinsics.pixels()],
            intrinsics,
            pose,
        }
    }
}

const NEAR: f64 = 1e-6;

/// Renders the depth seen from `pose`. Missed rays store `depth_far`.
pub fn ray_depth(scene: &Scene, pose: CameraPose, intrinsics: &CameraIntrinsics) -> Result<DepthImage> {
    let mut values = vec![0.0f32; intrinsics.pixels()];
    let mut scratch = RenderScratch::default();
    ray_depth_into(scene, pose, intrinsics, &mut scratch, &mut values)?;
    Ok(DepthImage {
        values,
        intrinsics: *intrinsics,
        pose,
    })
}

/// Reusable per-worker buffers for [`ray_depth_into`].
#[derive(Default, Debug)]
pub struct RenderScratch {
    depth: Vec<f64>,
    nx: Vec<f64>,
    ny: Vec<f64>,
    visible: Vec<(f64, usize, (usize, usize, usize, usize))>,
}

/// Allocation-free variant of [`ray_depth`] writing into `out`.
pub fn ray_depth_into(
    scene: &Scene,
    pose: CameraPose,
    intr: &CameraIntrinsics,
    scratch: &mut RenderScratch,
    out: &mut [f32],
) -> Result<()> {
    intr.validate()?;
    if out.len() != intr.pixels() {
        return Err(Error::contract("depth buffer size does not match intrinsics"));
    }
    if let Some(i) = scene.containing_primitive(pose.position) {
        return Err(Error::DegeneratePose(i));
    }
    let (w, h) = (intr.width, intr.height);
    let far = intr.depth_far;
    let f = intr.focal();
    let o = pose.position;
    let (ax, ay, az) = pose.axes();

    scratch.nx.clear();
    scratch.nx.extend((0..w).map(|c| intr.norm_x(c)));
    scratch.ny.clear();
    scratch.ny.extend((0..h).map(|r| intr.norm_y(r)));
    scratch.depth.clear();
    scratch.depth.resize(w * h, far);
    let depth = &mut scratch.depth;

    // camera ray for pixel (r, c) in world coordinates: x*ax + y*ay + az, whose
    // ray parameter equals the optical-axis depth
    if let Some(gz) = scene.ground_plane_z {
        for (r, &yn) in scratch.ny.iter().enumerate() {
            let dz = yn * ay.z + az.z;
            if dz < 0.0 {
                let t = (gz - o.z) / dz;
                if t > 0.0 && t < far {
                    depth[r * w..(r + 1) * w].fill(t);
                }
            }
        }
    }

    // front to back, so pixels already covered by something nearer than a
    // primitive's closest possible depth skip its intersection test
    scratch.visible.clear();
    for (i, prim) in scene.primitives.iter().enumerate() {
        if let Some((zmin, rect)) = screen_rect(prim.aabb(), &pose, f, intr) {
            scratch.visible.push((zmin, i, rect));
        }
    }
    scratch.visible.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let rays = Rays {
        nx: &scratch.nx,
        ny: &scratch.ny,
        axes: (ax, ay, az),
        width: w,
    };
    for &(zmin, i, rect) in &scratch.visible {
        match scene.primitives[i] {
            Primitive::Sphere { center, radius } => {
                rays.fill(depth, rect, zmin, |d| ray_sphere(o, d, center, radius))
            }
            Primitive::Box { center, half_extents } => {
                let (lo, hi) = (center - half_extents, center + half_extents);
                rays.fill(depth, rect, zmin, |d| intersect_box(o, d, lo, hi))
            }
            Primitive::Cylinder { center, radius, height } => {
                rays.fill(depth, rect, zmin, |d| ray_cylinder(o, d, center, radius, height))
            }
        }
    }
    for (dst, &src) in out.iter_mut().zip(depth.iter()) {
        *dst = src.min(far) as f32;
    }
    Ok(())
}

struct Rays<'a> {
    nx: &'a [f64],
    ny: &'a [f64],
    axes: (Vec3, Vec3, Vec3),
    width: usize,
}

impl Rays<'_> {
    /// Min-composites `hit` over the pixel rectangle, skipping pixels that
    /// already hold something nearer than `zmin`.
    #[inline]
    fn fill(&self, depth: &mut [f64], (r0, r1, c0, c1): (usize, usize, usize, usize), zmin: f64, hit: impl Fn(Vec3) -> f64) {
        let (ax, ay, az) = self.axes;
        let w = self.width;
        for r in r0..=r1 {
            let base = ay * self.ny[r] + az;
            let row = &mut depth[r * w + c0..=r * w + c1];
            for (px, &xn) in row.iter_mut().zip(&self.nx[c0..=c1]) {
                if zmin >= *px {
                    continue;
                }
                let t = hit(base + ax * xn);
                if t < *px {
                    *px = t;
                }
            }
        }
    }
}

/// Smallest optical-axis depth of the box together with the inclusive pixel
/// rectangle (row0, row1, col0, col1) that can see it, or `None` when the box
/// is behind the camera or beyond the far plane.
fn screen_rect(
    (lo, hi): (Vec3, Vec3),
    pose: &CameraPose,
    f: f64,
    intr: &CameraIntrinsics,
) -> Option<(f64, (usize, usize, usize, usize))> {
    let mut zmin = f64::INFINITY;
    let mut zmax = f64::NEG_INFINITY;
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut behind = false;
    for i in 0..8 {
        let p = Vec3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        );
        let pc = pose.to_camera(p);
        zmin = zmin.min(pc.z);
        zmax = zmax.max(pc.z);
        if pc.z <= NEAR {
            behind = true;
        } else {
            let u = f * pc.x / pc.z + intr.cx();
            let v = f * pc.y / pc.z + intr.cy();
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    if zmax <= 0.0 || zmin > intr.depth_far {
        return None;
    }
    let (w, h) = (intr.width as f64, intr.height as f64);
    if behind {
        return Some((zmin, (0, intr.height - 1, 0, intr.width - 1)));
    }
    // pixel centers at i + 0.5
    let c0 = (umin - 0.5).ceil().max(0.0);
    let c1 = (umax - 0.5).floor().min(w - 1.0);
    let r0 = (vmin - 0.5).ceil().max(0.0);
    let r1 = (vmax - 0.5).floor().min(h - 1.0);
    if c0 > c1 || r0 > r1 {
        return None;
    }
    Some((zmin, (r0 as usize, r1 as usize, c0 as usize, c1 as usize)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, Aabb, GenConfig, Primitive};

    fn bounds() -> Aabb {
        Aabb::new(Vec3::new(-50.0, -50.0, -50.0), Vec3::new(50.0, 50.0, 50.0))
    }

    /// Brute-force box oracle: test each of the six face planes separately.
    fn box_face_oracle(o: Vec3, d: Vec3, c: Vec3, h: Vec3) -> f64 {
        let lo = c - h;
        let hi = c + h;
        let mut best = f64::INFINITY;
        for axis in 0..3 {
            if d[axis] == 0.0 {
                continue;
            }
            for plane in [lo[axis], hi[axis]] {
                let t = (plane - o[axis]) / d[axis];
                if t <= 0.0 {
                    continue;
                }
                let p = [o.x + t * d.x, o.y + t * d.y, o.z + t * d.z];
                let inside = (0..3).all(|k| k == axis || (p[k] >= lo[k] && p[k] <= hi[k]));
                if inside && t < best {
                    best = t;
                }
            }
        }
        best
    }

    #[test]
    fn empty_scene_is_far_everywhere() {
        let intr = CameraIntrinsics::new(16, 12, 90.0, 30.0).unwrap();
        let img = ray_depth(&Scene::empty(bounds()), CameraPose::new(Vec3::ZERO, 1.3), &intr).unwrap();
        assert!(img.values.iter().all(|&d| d == 30.0));
    }

    #[test]
    fn sphere_ahead_center_pixel() {
        // yaw 0 looks along world +x; odd dimensions put a pixel on the axis
        let s = Scene::new(
            vec![Primitive::Sphere {
                center: Vec3::new(5.0, 0.0, 0.0),
                radius: 1.0,
            }],
            bounds(),
            None,
        )
        .unwrap();
        let intr = CameraIntrinsics::new(65, 49, 90.0, 20.0).unwrap();
        let img = ray_depth(&s, CameraPose::new(Vec3::ZERO, 0.0), &intr).unwrap();
        assert_eq!(img.at(24, 32), 4.0);
    }

    #[test]
    fn box_matches_face_oracle_exactly() {
        let c = Vec3::new(5.0, 0.0, 0.0);
        let h = Vec3::new(1.0, 1.0, 1.0);
        let s = Scene::new(vec![Primitive::Box { center: c, half_extents: h }], bounds(), None).unwrap();
        let intr = CameraIntrinsics::new(64, 48, 90.0, 20.0).unwrap();
        let pose = CameraPose::new(Vec3::ZERO, 0.0);
        let img = ray_depth(&s, pose, &intr).unwrap();
        let (ax, ay, az) = pose.axes();
        let mut hits = 0;
        for r in 0..48 {
            for col in 0..64 {
                let d = ay * intr.norm_y(r) + az + ax * intr.norm_x(col);
                let t = box_face_oracle(Vec3::ZERO, d, c, h).min(20.0) as f32;
                assert_eq!(img.at(r, col), t, "pixel ({r},{col})");
                if t < 20.0 {
                    hits += 1;
                }
            }
        }
        assert!(hits > 100);
    }

    #[test]
    fn camera_inside_primitive_is_an_error() {
        let s = Scene::new(
            vec![Primitive::Sphere {
                center: Vec3::ZERO,
                radius: 1.0,
            }],
            bounds(),
            None,
        )
        .unwrap();
        let intr = CameraIntrinsics::new(8, 6, 90.0, 20.0).unwrap();
        assert!(matches!(
            ray_depth(&s, CameraPose::new(Vec3::new(0.1, 0.0, 0.0), 0.0), &intr),
            Err(Error::DegeneratePose(0))
        ));
    }

    /// Culling must not change the image: compare with an unculled render.
    #[test]
    fn culling_matches_brute_force() {
        let scene = generate_scene(11, &GenConfig::default()).unwrap();
        let intr = CameraIntrinsics::new(64, 48, 150.0, 25.0).unwrap();
        for (i, yaw) in [0.0, 0.9, 2.5, -1.7].into_iter().enumerate() {
            let pose = CameraPose::new(Vec3::new(-17.0, i as f64 - 1.5, 1.5), yaw);
            let img = ray_depth(&scene, pose, &intr).unwrap();
            let (ax, ay, az) = pose.axes();
            for r in 0..48 {
                for c in 0..64 {
                    let d = ay * intr.norm_y(r) + az + ax * intr.norm_x(c);
                    let mut t = f64::INFINITY;
                    for p in &scene.primitives {
                        t = t.min(p.intersect(pose.position, d));
                    }
                    if d.z < 0.0 {
                        let tg = (0.0 - pose.position.z) / d.z;
                        t = t.min(tg);
                    }
                    assert_eq!(img.at(r, c), t.min(25.0) as f32, "yaw {yaw} pixel ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn adding_a_primitive_never_increases_depth() {
        let mut scene = generate_scene(5, &GenConfig::default()).unwrap();
        let intr = CameraIntrinsics::new(32, 24, 90.0, 25.0).unwrap();
        let pose = CameraPose::new(Vec3::new(-17.0, 0.0, 1.5), 0.2);
        let before = ray_depth(&scene, pose, &intr).unwrap();
        scene.primitives.push(Primitive::Cylinder {
            center: Vec3::new(-10.0, 1.0, 2.0),
            radius: 0.8,
            height: 4.0,
        });
        let after = ray_depth(&scene, pose, &intr).unwrap();
        assert!(before.values.iter().zip(&after.values).all(|(b, a)| a <= b));
        assert!(before.values != after.values);
        // determinism
        assert_eq!(after, ray_depth(&scene, pose, &intr).unwrap());
    }

    #[test]
    fn center_ray_depth_bounded_by_closest_distance() {
        let scene = generate_scene(9, &GenConfig::default()).unwrap();
        let intr = CameraIntrinsics::new(33, 25, 90.0, 40.0).unwrap();
        for k in 0..20 {
            let p = Vec3::new(-17.0 + k as f64 * 1.7, (k as f64 * 0.37).sin() * 10.0, 1.5);
            if scene.containing_primitive(p).is_some() {
                continue;
            }
            let pose = CameraPose::new(p, k as f64 * 0.3);
            let img = ray_depth(&scene, pose, &intr).unwrap();
            let (d, _) = crate::scene::closest_distance(&scene, p);
            assert!(img.at(12, 16) as f64 >= d - 1e-5);
        }
    }
}

//! Dataset plumbing: multi-view scenes on disk, plus a deterministic
//! synthetic-scene generator (an analytic ray tracer over spheres and boxes
//! with Lambertian shading) that doubles as the ground-truth oracle for the
//! pipeline tests — it produces exact depths and region-ID maps alongside
//! the images.
//!
//! Directory layout: `images/NNNN.png`, `poses.json` (per-view intrinsics +
//! 4×4 camera-to-world pose), `meta.json` (scene AABB), and optionally
//! `depth/NNNN.fpt` (`[H × W × 2]` ray-distance + validity) and
//! `semantic/NNNN.png` (region IDs in the red channel).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::image_io::{load_labels, load_rgb, save_labels, save_rgb};
use crate::render::CameraModel;
use crate::scalar::{derive_seed, Real};
use crate::tensor::Tensor;

/// One posed view: image plus optional ground-truth side channels.
#[derive(Debug, Clone)]
pub struct SceneView<T> {
    pub camera: CameraModel<T>,
    /// `[H × W × 3]` in `[0, 1]`.
    pub image: Tensor<T>,
    /// `[H × W]` integer region IDs, 0 = background.
    pub labels: Option<Tensor<T>>,
    /// `[H × W × 2]`: distance along the unit pixel ray, and a 0/1 validity
    /// flag (matches the renderer's depth convention).
    pub depth: Option<Tensor<T>>,
}

/// A posed multi-view capture of one scene.
#[derive(Debug, Clone)]
pub struct SceneDataset<T> {
    pub aabb: Aabb<T>,
    pub views: Vec<SceneView<T>>,
}

impl<T: Real> SceneDataset<T> {
    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::invalid("SceneDataset::validate", "no views"));
        }
        let ext = self.aabb.extent();
        if ext.x <= T::zero() || ext.y <= T::zero() || ext.z <= T::zero() {
            return Err(Error::invalid("SceneDataset::validate", "degenerate AABB"));
        }
        let (h, w) = (self.views[0].camera.height, self.views[0].camera.width);
        for (i, view) in self.views.iter().enumerate() {
            let cam = &view.camera;
            if cam.height != h || cam.width != w {
                return Err(Error::invalid(
                    "SceneDataset::validate",
                    format!("view {i} is {}×{}, expected {w}×{h}", cam.width, cam.height),
                ));
            }
            if view.image.shape() != [h, w, 3] {
                return Err(Error::shape(
                    "SceneDataset::validate",
                    format!("view {i} image {:?}", view.image.shape()),
                ));
            }
            if let Some(l) = &view.labels {
                if l.shape() != [h, w] {
                    return Err(Error::shape(
                        "SceneDataset::validate",
                        format!("view {i} labels {:?}", l.shape()),
                    ));
                }
            }
            if let Some(d) = &view.depth {
                if d.shape() != [h, w, 2] {
                    return Err(Error::shape(
                        "SceneDataset::validate",
                        format!("view {i} depth {:?}", d.shape()),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Primitive kinds the reference ray tracer understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveShape {
    Sphere,
    Box,
}

/// One Lambertian primitive. Boxes are axis-aligned; a sphere's radius is
/// `half_extent[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: PrimitiveShape,
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    /// Base color in `[0, 1]`.
    pub albedo: [f64; 3],
    /// Semantic region, dense from 1 (0 is reserved for background).
    pub region_id: u32,
}

/// Recipe for a synthetic scene: geometry, lighting, and the camera orbit
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    pub objects: Vec<SceneObject>,
    /// Direction the light travels (need not be unit length).
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for SyntheticSceneSpec {
    /// A three-object arrangement with distinct albedos and regions: a big
    /// matte sphere, a box, and a small bright sphere.
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 0,
            aabb_min: [-1.0, -1.0, -1.0],
            aabb_max: [1.0, 1.0, 1.0],
            objects: vec![
                SceneObject {
                    shape: PrimitiveShape::Sphere,
                    center: [-0.35, -0.1, 0.1],
                    half_extent: [0.45, 0.45, 0.45],
                    albedo: [0.85, 0.25, 0.2],
                    region_id: 1,
                },
                SceneObject {
                    shape: PrimitiveShape::Box,
                    center: [0.45, -0.35, -0.2],
                    half_extent: [0.3, 0.35, 0.3],
                    albedo: [0.2, 0.45, 0.85],
                    region_id: 2,
                },
                SceneObject {
                    shape: PrimitiveShape::Sphere,
                    center: [0.25, 0.45, 0.35],
                    half_extent: [0.22, 0.22, 0.22],
                    albedo: [0.95, 0.85, 0.3],
                    region_id: 3,
                },
            ],
            light_dir: [-0.4, -0.8, -0.45],
            ambient: 0.25,
            diffuse: 0.75,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("SyntheticSceneSpec::validate", detail));
        for a in 0..3 {
            if self.aabb_min[a] >= self.aabb_max[a] {
                return bad(format!("AABB degenerate on axis {a}"));
            }
        }
        if self.objects.is_empty() {
            return bad("no objects".into());
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.region_id).collect();
        ids.sort_unstable();
        for (i, &id) in ids.iter().enumerate() {
            if id != i as u32 + 1 {
                return bad(format!("region IDs must be dense from 1, got {ids:?}"));
            }
        }
        if ids.len() > 255 {
            return bad("more than 255 regions do not fit the label PNG".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            for a in 0..3 {
                if o.half_extent[a] <= 0.0 {
                    return bad(format!("object {i} has non-positive extent"));
                }
                let r = if o.shape == PrimitiveShape::Sphere {
                    o.half_extent[0]
                } else {
                    o.half_extent[a]
                };
                if o.center[a] - r < self.aabb_min[a] || o.center[a] + r > self.aabb_max[a] {
                    return bad(format!("object {i} leaves the scene AABB on axis {a}"));
                }
            }
        }
        if self.ambient < 0.0 || self.diffuse < 0.0 {
            return bad("lighting terms must be non-negative".into());
        }
        let l = self.light_dir;
        if (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt() < 1e-9 {
            return bad("light direction is zero".into());
        }
        Ok(())
    }

    pub fn aabb<T: Real>(&self) -> Aabb<T> {
        Aabb::new(
            Vec3::from_array(self.aabb_min).cast(),
            Vec3::from_array(self.aabb_max).cast(),
        )
    }
}

/// First sphere/box hit along a ray, with shading inputs.
struct Hit {
    t: f64,
    normal: Vec3<f64>,
    albedo: [f64; 3],
    region_id: u32,
}

fn hit_sphere(o: Vec3<f64>, d: Vec3<f64>, c: Vec3<f64>, r: f64) -> Option<(f64, Vec3<f64>)> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.dot(oc) - r * r);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = if -b - sq > 1e-6 { -b - sq } else { -b + sq };
    if t <= 1e-6 {
        return None;
    }
    let p = o + d * t;
    Some((t, (p - c) * (1.0 / r)))
}

fn hit_box(
    o: Vec3<f64>,
    d: Vec3<f64>,
    c: Vec3<f64>,
    h: Vec3<f64>,
) -> Option<(f64, Vec3<f64>)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        let (oa, da) = (o.get(a) - c.get(a), d.get(a));
        let ha = h.get(a);
        if da.abs() < 1e-12 {
            if oa.abs() > ha {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((-ha - oa) / da, (ha - oa) / da);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_enter {
            t_enter = t0;
            axis = a;
        }
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    if t_enter <= 1e-6 {
        return None; // inside or behind; shading from inside is a non-goal
    }
    let p = o + d * t_enter;
    let mut n = [0.0; 3];
    n[axis] = (p.get(axis) - c.get(axis)).signum();
    Some((t_enter, Vec3::from_array(n)))
}

fn trace(spec: &SyntheticSceneSpec, o: Vec3<f64>, d: Vec3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for obj in &spec.objects {
        let c = Vec3::from_array(obj.center);
        let hit = match obj.shape {
            PrimitiveShape::Sphere => hit_sphere(o, d, c, obj.half_extent[0]),
            PrimitiveShape::Box => hit_box(o, d, c, Vec3::from_array(obj.half_extent)),
        };
        if let Some((t, normal)) = hit {
            if best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    normal,
                    albedo: obj.albedo,
                    region_id: obj.region_id,
                });
            }
        }
    }
    best
}

fn shade(spec: &SyntheticSceneSpec, hit: &Hit) -> [f64; 3] {
    let l = Vec3::from_array(spec.light_dir).normalized() * -1.0;
    let lambert = hit.normal.dot(l).max(0.0);
    let gain = spec.ambient + spec.diffuse * lambert;
    [
        (hit.albedo[0] * gain).clamp(0.0, 1.0),
        (hit.albedo[1] * gain).clamp(0.0, 1.0),
        (hit.albedo[2] * gain).clamp(0.0, 1.0),
    ]
}

/// Camera-to-world pose looking from `eye` toward `target`; image up tracks
/// world `up`.
fn look_at_pose(eye: Vec3<f64>, target: Vec3<f64>, up: Vec3<f64>) -> [[f64; 4]; 4] {
    let z = (target - eye).normalized();
    let x = z.cross(up).normalized();
    let y = z.cross(x);
    [
        [x.x, y.x, z.x, eye.x],
        [x.y, y.y, z.y, eye.y],
        [x.z, y.z, z.z, eye.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Cameras on a seeded orbit around the scene box: evenly spaced azimuths
/// with small per-view jitter, mild elevation, all looking at the center.
pub fn orbit_cameras<T: Real>(
    spec: &SyntheticSceneSpec,
    n_views: usize,
    width: usize,
    height: usize,
) -> Result<Vec<CameraModel<T>>> {
    let aabb: Aabb<f64> = spec.aabb();
    let center = aabb.center();
    let d = aabb.diagonal() * 0.5;
    let radius = 2.6 * d;
    let tan_half = 1.15 * d / (radius - d);
    let fx = width as f64 * 0.5 / tan_half;
    let fy = fx;
    let (near, far) = (radius - 1.3 * d, radius + 1.3 * d);
    let mut cams = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1000 + i as u64));
        let azimuth: f64 = std::f64::consts::TAU * i as f64 / n_views as f64
            + rng.random_range(-0.08..0.08);
        let elevation: f64 = 0.35 + rng.random_range(-0.05..0.05);
        let eye = center
            + Vec3::new(
                elevation.cos() * azimuth.cos(),
                elevation.sin(),
                elevation.cos() * azimuth.sin(),
            ) * radius;
        let pose = look_at_pose(eye, center, Vec3::new(0.0, 1.0, 0.0));
        cams.push(
            CameraModel::new(
                fx,
                fy,
                width as f64 * 0.5,
                height as f64 * 0.5,
                width,
                height,
                &pose,
                near,
                far,
            )?
            .cast(),
        );
    }
    Ok(cams)
}

/// Ray-traces the spec from a seeded camera orbit: images, exact per-pixel
/// ray distances, and region-ID maps. Deterministic in `(spec, n_views,
/// size)`.
pub fn generate_synthetic_scene<T: Real>(
    spec: &SyntheticSceneSpec,
    n_views: usize,
    width: usize,
    height: usize,
) -> Result<SceneDataset<T>> {
    spec.validate()?;
    if n_views < 2 {
        return Err(Error::invalid(
            "generate_synthetic_scene",
            format!("need at least 2 views, got {n_views}"),
        ));
    }
    if width < 2 || height < 2 {
        return Err(Error::invalid("generate_synthetic_scene", "image too small"));
    }
    let cams: Vec<CameraModel<f64>> = orbit_cameras(spec, n_views, width, height)?;
    let mut views = Vec::with_capacity(n_views);
    for cam in cams {
        let mut image = Tensor::<f64>::zeros(&[height, width, 3]);
        let mut labels = Tensor::<f64>::zeros(&[height, width]);
        let mut depth = Tensor::<f64>::zeros(&[height, width, 2]);
        for v in 0..height {
            for u in 0..width {
                let ray = cam.ray_for_pixel(u, v)?;
                let px = v * width + u;
                if let Some(hit) = trace(spec, ray.origin, ray.dir) {
                    let rgb = shade(spec, &hit);
                    image.data_mut()[px * 3..px * 3 + 3].copy_from_slice(&rgb);
                    labels.data_mut()[px] = hit.region_id as f64;
                    depth.data_mut()[px * 2] = hit.t;
                    depth.data_mut()[px * 2 + 1] = 1.0;
                }
            }
        }
        views.push(SceneView {
            camera: cam.cast(),
            image: image.cast(),
            labels: Some(labels.cast()),
            depth: Some(depth.cast()),
        });
    }
    let ds = SceneDataset {
        aabb: spec.aabb(),
        views,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    /// Row-major 4×4 camera-to-world.
    pose: [[f64; 4]; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRecord {
    aabb_min: [f64; 3],
    aabb_max: [f64; 3],
}

fn view_name(i: usize) -> String {
    format!("{i:04}")
}

/// Writes the dataset in the on-disk layout (see module docs). Optional
/// channels are written only when present on every view.
pub fn save_dataset<T: Real>(dir: &Path, ds: &SceneDataset<T>) -> Result<()> {
    ds.validate()?;
    let io = |e: std::io::Error| Error::io(dir, e);
    fs::create_dir_all(dir.join("images")).map_err(io)?;
    let all_labels = ds.views.iter().all(|v| v.labels.is_some());
    let all_depth = ds.views.iter().all(|v| v.depth.is_some());
    if all_labels {
        fs::create_dir_all(dir.join("semantic")).map_err(io)?;
    }
    if all_depth {
        fs::create_dir_all(dir.join("depth")).map_err(io)?;
    }

    let mut poses = Vec::with_capacity(ds.n_views());
    for (i, view) in ds.views.iter().enumerate() {
        let name = view_name(i);
        save_rgb(&dir.join("images").join(format!("{name}.png")), &view.image)?;
        if all_labels {
            save_labels(
                &dir.join("semantic").join(format!("{name}.png")),
                view.labels.as_ref().expect("checked all_labels"),
            )?;
        }
        if all_depth {
            view.depth
                .as_ref()
                .expect("checked all_depth")
                .write_fpt(&dir.join("depth").join(format!("{name}.fpt")))?;
        }
        let cam: CameraModel<f64> = view.camera.cast();
        poses.push(PoseRecord {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            near: cam.near,
            far: cam.far,
            pose: cam.pose_matrix(),
        });
    }
    let poses_json = serde_json::to_string_pretty(&poses)
        .map_err(|e| Error::invalid("save_dataset", format!("poses serialization: {e}")))?;
    fs::write(dir.join("poses.json"), poses_json).map_err(io)?;
    let aabb: Aabb<f64> = ds.aabb.cast();
    let meta = MetaRecord {
        aabb_min: aabb.min.to_array(),
        aabb_max: aabb.max.to_array(),
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::invalid("save_dataset", format!("meta serialization: {e}")))?;
    fs::write(dir.join("meta.json"), meta_json).map_err(io)?;
    Ok(())
}

/// Loads a dataset directory; `semantic/` and `depth/` are optional.
pub fn load_dataset<T: Real>(dir: &Path) -> Result<SceneDataset<T>> {
    let io = |e: std::io::Error| Error::io(dir, e);
    let poses_raw = fs::read_to_string(dir.join("poses.json")).map_err(io)?;
    let poses: Vec<PoseRecord> = serde_json::from_str(&poses_raw)
        .map_err(|e| Error::invalid("load_dataset", format!("poses.json: {e}")))?;
    let meta_raw = fs::read_to_string(dir.join("meta.json")).map_err(io)?;
    let meta: MetaRecord = serde_json::from_str(&meta_raw)
        .map_err(|e| Error::invalid("load_dataset", format!("meta.json: {e}")))?;

    let mut views = Vec::with_capacity(poses.len());
    for (i, rec) in poses.iter().enumerate() {
        let name = view_name(i);
        let camera: CameraModel<T> = CameraModel::new(
            rec.fx, rec.fy, rec.cx, rec.cy, rec.width, rec.height, &rec.pose, rec.near, rec.far,
        )?
        .cast();
        let image: Tensor<T> =
            load_rgb::<f64>(&dir.join("images").join(format!("{name}.png")))?.cast();
        let label_path = dir.join("semantic").join(format!("{name}.png"));
        let labels = if label_path.exists() {
            Some(load_labels::<f64>(&label_path)?.cast())
        } else {
            None
        };
        let depth_path = dir.join("depth").join(format!("{name}.fpt"));
        let depth = if depth_path.exists() {
            Some(Tensor::<T>::read_fpt(&depth_path)?)
        } else {
            None
        };
        views.push(SceneView {
            camera,
            image,
            labels,
            depth,
        });
    }
    let ds = SceneDataset {
        aabb: Aabb::new(
            Vec3::from_array(meta.aabb_min).cast(),
            Vec3::from_array(meta.aabb_max).cast(),
        ),
        views,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("fprf-dataset-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn single_sphere_spec() -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            objects: vec![SceneObject {
                shape: PrimitiveShape::Sphere,
                center: [0.0, 0.0, 0.0],
                half_extent: [0.5, 0.5, 0.5],
                albedo: [0.8, 0.3, 0.3],
                region_id: 1,
            }],
            ..SyntheticSceneSpec::default()
        }
    }

    #[test]
    fn centered_sphere_depth_matches_analytic_distance() {
        let spec = single_sphere_spec();
        let ds: SceneDataset<f64> = generate_synthetic_scene(&spec, 2, 32, 32).unwrap();
        for view in &ds.views {
            let cam = &view.camera;
            // The camera looks at the sphere center, so the ray nearest the
            // principal axis hits at (distance to center − radius) + the
            // tiny sagitta of the off-axis offset; probe the center pixel.
            let (u, v) = (cam.width / 2, cam.height / 2);
            let ray = cam.ray_for_pixel(u, v).unwrap();
            let oc = ray.origin - Vec3::new(0.0, 0.0, 0.0);
            let b = oc.dot(ray.dir);
            let expected = -b - (b * b - (oc.dot(oc) - 0.25)).sqrt();
            let got = view.depth.as_ref().unwrap().data()[(v * cam.width + u) * 2];
            assert!(
                (got - expected).abs() < 1e-6,
                "depth {got} vs analytic {expected}"
            );
        }
    }

    #[test]
    fn silhouette_is_a_disk_on_the_center_row() {
        let spec = single_sphere_spec();
        let ds: SceneDataset<f64> = generate_synthetic_scene(&spec, 2, 65, 65).unwrap();
        let view = &ds.views[0];
        let labels = view.labels.as_ref().unwrap();
        let w = view.camera.width;
        let row = w / 2;
        // Hits form one contiguous run on the central scanline, symmetric
        // about the principal column within a pixel.
        let hits: Vec<usize> = (0..w).filter(|&u| labels.data()[row * w + u] > 0.0).collect();
        assert!(!hits.is_empty());
        let (first, last) = (hits[0], *hits.last().unwrap());
        assert_eq!(hits.len(), last - first + 1, "contiguous run");
        let mid = (first + last) as f64 / 2.0;
        assert!((mid - (w as f64 - 1.0) / 2.0).abs() <= 1.0);
    }

    #[test]
    fn labels_nonzero_exactly_where_depth_is_valid() {
        let ds: SceneDataset<f64> =
            generate_synthetic_scene(&SyntheticSceneSpec::default(), 3, 48, 36).unwrap();
        for view in &ds.views {
            let labels = view.labels.as_ref().unwrap();
            let depth = view.depth.as_ref().unwrap();
            for px in 0..labels.len() {
                let labeled = labels.data()[px] > 0.0;
                let valid = depth.data()[px * 2 + 1] > 0.5;
                assert_eq!(labeled, valid, "pixel {px}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSceneSpec::default();
        let a: SceneDataset<f64> = generate_synthetic_scene(&spec, 3, 24, 24).unwrap();
        let b: SceneDataset<f64> = generate_synthetic_scene(&spec, 3, 24, 24).unwrap();
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.image, vb.image);
            assert_eq!(va.depth, vb.depth);
            assert_eq!(va.camera.pose_matrix(), vb.camera.pose_matrix());
        }
    }

    #[test]
    fn every_view_sees_every_region() {
        let ds: SceneDataset<f64> =
            generate_synthetic_scene(&SyntheticSceneSpec::default(), 6, 64, 48).unwrap();
        for (i, view) in ds.views.iter().enumerate() {
            let labels = view.labels.as_ref().unwrap();
            for region in 1..=3 {
                assert!(
                    labels.data().iter().any(|&l| l == region as f64),
                    "view {i} misses region {region}"
                );
            }
        }
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut spec = SyntheticSceneSpec::default();
        spec.objects[0].center = [5.0, 0.0, 0.0]; // escapes the AABB
        assert!(generate_synthetic_scene::<f64>(&spec, 2, 16, 16).is_err());

        let mut gap = SyntheticSceneSpec::default();
        gap.objects[2].region_id = 7; // IDs no longer dense
        assert!(gap.validate().is_err());

        assert!(
            generate_synthetic_scene::<f64>(&SyntheticSceneSpec::default(), 1, 16, 16).is_err()
        );
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tmpdir("roundtrip");
        let ds: SceneDataset<f64> =
            generate_synthetic_scene(&SyntheticSceneSpec::default(), 3, 32, 24).unwrap();
        save_dataset(&dir, &ds).unwrap();
        let back: SceneDataset<f64> = load_dataset(&dir).unwrap();
        assert_eq!(back.n_views(), 3);
        assert!((back.aabb.min - ds.aabb.min).norm() < 1e-12);
        for (a, b) in ds.views.iter().zip(&back.views) {
            assert_eq!(a.camera.pose_matrix(), b.camera.pose_matrix());
            assert_eq!(a.camera.width, b.camera.width);
            // PNG quantizes to 8 bits.
            assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-9);
            // Labels are integers and survive exactly.
            assert_eq!(a.labels, b.labels);
            // Depth goes through an f32 payload.
            assert!(
                a.depth
                    .as_ref()
                    .unwrap()
                    .max_abs_diff(b.depth.as_ref().unwrap())
                    < 1e-5
            );
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn loader_tolerates_missing_side_channels() {
        let dir = tmpdir("noside");
        let mut ds: SceneDataset<f64> =
            generate_synthetic_scene(&SyntheticSceneSpec::default(), 2, 16, 16).unwrap();
        for v in &mut ds.views {
            v.labels = None;
            v.depth = None;
        }
        save_dataset(&dir, &ds).unwrap();
        let back: SceneDataset<f64> = load_dataset(&dir).unwrap();
        assert!(back.views.iter().all(|v| v.labels.is_none() && v.depth.is_none()));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn box_faces_shade_flat() {
        // A box face is planar, so Lambertian shading is constant across it:
        // every pixel of one region+normal combination shares a color.
        let spec = SyntheticSceneSpec {
            objects: vec![SceneObject {
                shape: PrimitiveShape::Box,
                center: [0.0, 0.0, 0.0],
                half_extent: [0.4, 0.4, 0.4],
                albedo: [0.5, 0.6, 0.7],
                region_id: 1,
            }],
            ..SyntheticSceneSpec::default()
        };
        let ds: SceneDataset<f64> = generate_synthetic_scene(&spec, 2, 40, 40).unwrap();
        let view = &ds.views[0];
        let w = view.camera.width;
        let labels = view.labels.as_ref().unwrap();
        // Collect the distinct colors over the silhouette; a box shows at
        // most three faces from one viewpoint.
        let mut colors: Vec<[u32; 3]> = Vec::new();
        for px in 0..labels.len() {
            if labels.data()[px] > 0.0 {
                let q = [
                    (view.image.data()[px * 3] * 1e9) as u32,
                    (view.image.data()[px * 3 + 1] * 1e9) as u32,
                    (view.image.data()[px * 3 + 2] * 1e9) as u32,
                ];
                if !colors.contains(&q) {
                    colors.push(q);
                }
            }
        }
        assert!(
            (1..=3).contains(&colors.len()),
            "{} distinct face colors on a box (w={w})",
            colors.len()
        );
    }
}

//! Procedural shape dataset for desk-scale experiments: six surface
//! primitives under random rotation, translation and aspect jitter, with
//! optional Gaussian noise.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::episodes::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::geometry::{write_xyz, PointCloud};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::Sphere,
        Primitive::Cube,
        Primitive::Cylinder,
        Primitive::Cone,
        Primitive::Torus,
        Primitive::Plane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Sphere => "sphere",
            Primitive::Cube => "cube",
            Primitive::Cylinder => "cylinder",
            Primitive::Cone => "cone",
            Primitive::Torus => "torus",
            Primitive::Plane => "plane",
        }
    }

    /// A point on the canonical surface, centred at the origin with unit
    /// extent (sphere radius 0.5).
    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 3] {
        match self {
            Primitive::Sphere => {
                let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
                [0.5 * x, 0.5 * y, 0.5 * z]
            }
            Primitive::Cube => {
                let face = rng.gen_range(0..6);
                let (u, v) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                let s = if face % 2 == 0 { 0.5 } else { -0.5 };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            Primitive::Cylinder => {
                let theta = rng.gen_range(0.0..TAU);
                // Lateral area pi, caps pi/2.
                if rng.gen_bool(2.0 / 3.0) {
                    [0.5 * theta.cos(), 0.5 * theta.sin(), rng.gen_range(-0.5..0.5)]
                } else {
                    let r = 0.5 * rng.gen::<f64>().sqrt();
                    let z = if rng.gen_bool(0.5) { 0.5 } else { -0.5 };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            Primitive::Cone => {
                let theta = rng.gen_range(0.0..TAU);
                let lateral = PI * 0.5 * (1.25f64).sqrt();
                let base = PI * 0.25;
                let t = rng.gen::<f64>().sqrt();
                if rng.gen_bool(lateral / (lateral + base)) {
                    [0.5 * t * theta.cos(), 0.5 * t * theta.sin(), 0.5 - t]
                } else {
                    [0.5 * t * theta.cos(), 0.5 * t * theta.sin(), -0.5]
                }
            }
            Primitive::Torus => {
                let (big, small) = (0.35, 0.15);
                loop {
                    let u = rng.gen_range(0.0..TAU);
                    let v = rng.gen_range(0.0..TAU);
                    if rng.gen::<f64>() * (big + small) <= big + small * v.cos() {
                        let ring = big + small * v.cos();
                        break [ring * u.cos(), ring * u.sin(), small * v.sin()];
                    }
                }
            }
            Primitive::Plane => [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0],
        }
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    // Uniform unit quaternion.
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
        b * (TAU * u3).cos(),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// One posed instance of `shape`. Returns the cloud and the posed centre.
/// Spheres are only rotated and translated so their radius stays 0.5;
/// other primitives also get a per-axis stretch in `[0.75, 1.25]`.
pub fn generate_shape<R: Rng + ?Sized>(
    shape: Primitive,
    points: usize,
    noise: f64,
    id: &str,
    rng: &mut R,
) -> Result<(PointCloud, [f64; 3])> {
    if points == 0 {
        return Err(Error::Argument("a shape needs at least one point".into()));
    }
    let stretch = if shape == Primitive::Sphere {
        [1.0; 3]
    } else {
        [
            rng.gen_range(0.75..1.25),
            rng.gen_range(0.75..1.25),
            rng.gen_range(0.75..1.25),
        ]
    };
    let rot = random_rotation(rng);
    let center = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Argument(e.to_string()))?;

    let mut pts = Vec::with_capacity(points);
    for _ in 0..points {
        let p = shape.sample(rng);
        let s = [p[0] * stretch[0], p[1] * stretch[1], p[2] * stretch[2]];
        let mut q = [0.0; 3];
        for (i, row) in rot.iter().enumerate() {
            q[i] = row[0] * s[0] + row[1] * s[1] + row[2] * s[2] + center[i];
            if noise > 0.0 {
                q[i] += normal.sample(rng);
            }
        }
        pts.push(q);
    }
    Ok((PointCloud::from_points(id, &pts)?, center))
}

/// Writes `classes * per_class` xyz files under `out_dir/<shape>/` plus
/// `out_dir/manifest.json`. Class labels run from 1 to `classes`.
pub fn synthesize(
    out_dir: impl AsRef<Path>,
    classes: usize,
    per_class: usize,
    points: usize,
    noise: f64,
    seed: u64,
) -> Result<Manifest> {
    if classes == 0 || classes > Primitive::ALL.len() {
        return Err(Error::Argument(format!(
            "between 1 and {} classes are available, asked for {classes}",
            Primitive::ALL.len()
        )));
    }
    let out_dir = out_dir.as_ref();
    let mut entries = Vec::with_capacity(classes * per_class);
    for (k, shape) in Primitive::ALL[..classes].iter().enumerate() {
        let dir = out_dir.join(shape.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let rel = format!("{}/{}_{i:03}.xyz", shape.name(), shape.name());
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &rel));
            let (cloud, _) = generate_shape(*shape, points, noise, &rel, &mut rng)?;
            write_xyz(&cloud, out_dir.join(&rel))?;
            entries.push(ManifestEntry {
                path: rel,
                class: k as i64 + 1,
            });
        }
    }
    let manifest = Manifest::new(entries, out_dir);
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

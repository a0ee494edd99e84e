#![allow(dead_code)]

use std::f64::consts::PI;

use surface_fixtures::Vec3;

/// `nx × ny` grid with spacing `step`, starting at `origin`, in the z = 0 plane.
pub fn grid(nx: usize, ny: usize, step: f64, origin: (f64, f64)) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            pts.push(Vec3::new(origin.0 + i as f64 * step, origin.1 + j as f64 * step, 0.0));
        }
    }
    pts
}

/// Grid over the unit square with `n` points per side.
pub fn unit_square(n: usize) -> Vec<Vec3> {
    grid(n, n, 1.0 / (n - 1) as f64, (0.0, 0.0))
}

/// Near-uniform sphere sampling along a golden-angle spiral.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z) * radius
        })
        .collect()
}

/// Angle between two vectors in degrees.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Geodesic angle between a point on a sphere and a unit axis.
pub fn polar_angle(p: &Vec3, axis: &Vec3) -> f64 {
    (p.normalize().dot(axis)).clamp(-1.0, 1.0).acos()
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{dist2_points, CubeBounds, TriMesh};

/// Magnitudes of the synthetic coarse-reconstruction defects (cm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionSpec {
    /// Inclusive range of blob artifacts per mesh.
    pub blobs: (usize, usize),
    /// Peak outward displacement of a blob.
    pub blob_height: (f64, f64),
    /// Gaussian radius of a blob.
    pub blob_width: (f64, f64),
    /// Per-vertex displacement noise along the normal.
    pub noise_sigma: f64,
    /// Uniform outward offset along the normal (over-estimated volume).
    pub inflate: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            blobs: (1, 3),
            blob_height: (3.0, 6.0),
            blob_width: (3.0, 5.0),
            noise_sigma: 0.3,
            inflate: 1.0,
        }
    }
}

impl CorruptionSpec {
    pub fn none() -> Self {
        CorruptionSpec {
            blobs: (0, 0),
            blob_height: (0.0, 0.0),
            blob_width: (1.0, 1.0),
            noise_sigma: 0.0,
            inflate: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        let no_blobs = self.blobs.1 == 0 || self.blob_height.1 == 0.0;
        no_blobs && self.noise_sigma == 0.0 && self.inflate == 0.0
    }

    fn validate(&self) -> Result<()> {
        let ok = self.blobs.0 <= self.blobs.1
            && 0.0 <= self.blob_height.0
            && self.blob_height.0 <= self.blob_height.1
            && 0.0 < self.blob_width.0
            && self.blob_width.0 <= self.blob_width.1
            && self.noise_sigma >= 0.0
            && self.inflate.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid corruption spec {self:?}")))
        }
    }

    fn scaled(&self, s: f64) -> Self {
        CorruptionSpec {
            blob_height: (self.blob_height.0 * s, self.blob_height.1 * s),
            noise_sigma: self.noise_sigma * s,
            inflate: self.inflate * s,
            ..*self
        }
    }
}

pub const CORRUPTION_ATTEMPTS: usize = 5;

/// Displaces vertices along their normals by a uniform inflation, Gaussian
/// bumps around random surface vertices and per-vertex noise. Connectivity is
/// untouched, so the result stays closed; attempts that invert the surface or
/// leave `bounds` are retried at half magnitude.
pub fn corrupt_coarse(
    mesh: &TriMesh,
    spec: &CorruptionSpec,
    bounds: Option<&CubeBounds>,
    seed: u64,
) -> Result<TriMesh> {
    spec.validate()?;
    mesh.validate()?;
    if spec.is_zero() {
        return Ok(mesh.clone());
    }
    let normals = mesh.vertex_normals();
    let mut last_err = None;
    for attempt in 0..CORRUPTION_ATTEMPTS {
        let s = spec.scaled(0.5f64.powi(attempt as i32));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_blobs = rng.random_range(s.blobs.0..=s.blobs.1);
        let blobs: Vec<(usize, f64, f64)> = (0..n_blobs)
            .map(|_| {
                let v = rng.random_range(0..mesh.vertices.len());
                let h = rng.random_range(s.blob_height.0..=s.blob_height.1);
                let w = rng.random_range(s.blob_width.0..=s.blob_width.1);
                (v, h, w)
            })
            .collect();
        let mut out = mesh.clone();
        for (i, v) in out.vertices.iter_mut().enumerate() {
            let p = mesh.vertices[i];
            let mut offset = s.inflate + s.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            for &(c, h, w) in &blobs {
                offset += h * (-dist2_points(p, mesh.vertices[c]) / (2.0 * w * w)).exp();
            }
            *v = std::array::from_fn(|a| p[a] + offset * normals[i][a]);
        }
        let check = out.validate().and_then(|_| bounds.map_or(Ok(()), |b| b.check_contains(&out)));
        match check {
            Ok(()) => return Ok(out),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::validity(format!(
        "corruption failed after {CORRUPTION_ATTEMPTS} attempts: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

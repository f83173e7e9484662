use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{add, scale, sub, InsideTester, Point3, TriMesh};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub position: Point3,
    /// 1 inside, 0 outside.
    pub label: u8,
}

/// Gaussian displacement scale(s) in centimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaSpec {
    Single(f64),
    /// The first `⌈count/2⌉` points use `max`, the rest `min`.
    Pair {
        max: f64,
        min: f64,
    },
}

impl SigmaSpec {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SigmaSpec::Single(s) => s > 0.0 && s.is_finite(),
            SigmaSpec::Pair { max, min } => max > 0.0 && min > 0.0 && max.is_finite() && min.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("sigma values must be positive, got {self:?}")))
        }
    }

    fn sigma_for(&self, index: usize, count: usize) -> f64 {
        match *self {
            SigmaSpec::Single(s) => s,
            SigmaSpec::Pair { max, min } => {
                if index < count.div_ceil(2) {
                    max
                } else {
                    min
                }
            }
        }
    }
}

/// Area-weighted triangle picker.
pub struct SurfaceSampler<'m> {
    mesh: &'m TriMesh,
    cumulative: Vec<f64>,
}

impl<'m> SurfaceSampler<'m> {
    pub fn new(mesh: &'m TriMesh) -> Result<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = (0..mesh.triangles.len())
            .map(|t| {
                acc += mesh.triangle_area(t);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::validity("cannot sample a mesh with zero surface area"));
        }
        Ok(SurfaceSampler { mesh, cumulative })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Point3 {
        let total = *self.cumulative.last().unwrap();
        let r = rng.random::<f64>() * total;
        let t = self.cumulative.partition_point(|&c| c <= r).min(self.cumulative.len() - 1);
        let [a, b, c] = self.mesh.corners(t);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let su = u.sqrt();
        add(a, add(scale(sub(b, a), su * (1.0 - v)), scale(sub(c, a), su * v)))
    }
}

/// `count` area-uniform points on the surface.
pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<Vec<Point3>> {
    let sampler = SurfaceSampler::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// Gaussian-displaced points around `surface`, labelled against `truth`.
pub fn sample_displaced(
    surface: &TriMesh,
    truth: &TriMesh,
    count: usize,
    sigma: SigmaSpec,
    seed: u64,
) -> Result<Vec<LabeledPoint>> {
    if count == 0 {
        return Err(Error::config("point count must be positive"));
    }
    sigma.validate()?;
    let sampler = SurfaceSampler::new(surface)?;
    let tester = InsideTester::new(truth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point3> = (0..count)
        .map(|i| {
            let base = sampler.sample(&mut rng);
            let s = sigma.sigma_for(i, count);
            let d: Point3 = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * s);
            add(base, d)
        })
        .collect();
    Ok(points.into_iter().map(|position| LabeledPoint { position, label: tester.label(position) }).collect())
}

/// Training points near a watertight mesh, labelled against the same mesh.
pub fn sample_training_points(mesh: &TriMesh, count: usize, sigma: SigmaSpec, seed: u64) -> Result<Vec<LabeledPoint>> {
    sample_displaced(mesh, mesh, count, sigma, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::tests::unit_cube;

    #[test]
    fn surface_points_lie_on_cube() {
        let pts = sample_surface(&unit_cube(), 500, 3).unwrap();
        for p in pts {
            let on_face = p.iter().any(|&c| c.abs() < 1e-12 || (c - 1.0).abs() < 1e-12);
            assert!(on_face && p.iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c)));
        }
    }

    #[test]
    fn pair_split_and_determinism() {
        let m = unit_cube();
        let a = sample_training_points(&m, 101, SigmaSpec::Pair { max: 0.3, min: 0.01 }, 9).unwrap();
        let b = sample_training_points(&m, 101, SigmaSpec::Pair { max: 0.3, min: 0.01 }, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(SigmaSpec::Pair { max: 2.0, min: 1.0 }.sigma_for(50, 101), 2.0);
        assert_eq!(SigmaSpec::Pair { max: 2.0, min: 1.0 }.sigma_for(51, 101), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = unit_cube();
        assert!(sample_training_points(&m, 0, SigmaSpec::Single(1.0), 0).is_err());
        assert!(sample_training_points(&m, 5, SigmaSpec::Single(0.0), 0).is_err());
        let flat = TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 2]]).unwrap();
        assert!(sample_surface(&flat, 5, 0).is_err());
    }
}

use super::{Bvh, Point3, TriMesh};
use crate::error::Result;

/// Points closer than this to the surface are labelled inside.
pub const SURFACE_EPS: f64 = 1e-6;

/// Fixed, mutually non-parallel, non-axis-aligned ray directions.
const RAYS: [Point3; 3] = [
    [0.577_215_664_901_532_9, 0.618_033_988_749_894_8, 0.533_402_734_902_210_4],
    [-0.707_106_781_186_547_5, 0.271_828_182_845_904_5, 0.653_281_482_438_188_3],
    [0.141_421_356_237_309_5, -0.836_660_026_534_075_5, 0.529_150_262_212_918],
];

/// Reusable inside/outside oracle over a watertight mesh.
pub struct InsideTester<'m> {
    bvh: Bvh<'m>,
}

impl<'m> InsideTester<'m> {
    pub fn new(mesh: &'m TriMesh) -> Result<Self> {
        mesh.check_watertight()?;
        Ok(InsideTester { bvh: Bvh::new(mesh) })
    }

    pub fn bvh(&self) -> &Bvh<'m> {
        &self.bvh
    }

    /// 1 inside (or on the surface), 0 outside; majority vote of ray parities.
    pub fn label(&self, p: Point3) -> u8 {
        if self.bvh.within(p, SURFACE_EPS) {
            return 1;
        }
        let votes: usize = RAYS.iter().map(|&d| self.bvh.crossings(p, d) % 2).sum();
        u8::from(votes >= 2)
    }
}

pub fn occupancy_label(mesh: &TriMesh, p: Point3) -> Result<u8> {
    Ok(InsideTester::new(mesh)?.label(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::tests::unit_cube;

    #[test]
    fn cube_labels() {
        let c = unit_cube();
        assert_eq!(occupancy_label(&c, [0.5, 0.5, 0.5]).unwrap(), 1);
        assert_eq!(occupancy_label(&c, [2.0, 2.0, 2.0]).unwrap(), 0);
        assert_eq!(occupancy_label(&c, [1.0, 0.5, 0.5]).unwrap(), 1);
        assert_eq!(occupancy_label(&c, [0.0, 0.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn open_mesh_rejected() {
        let mut c = unit_cube();
        c.triangles.truncate(10);
        assert!(occupancy_label(&c, [0.5; 3]).is_err());
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{dot, Point3};
use crate::error::{Error, Result};

/// Depth below which a pinhole projection is rejected.
pub const PINHOLE_MIN_DEPTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    /// Pixels per centimetre.
    Orthographic { scale: f64 },
    /// Focal length in pixels.
    Pinhole { focal: f64 },
}

/// World → camera frame is `R·p + t`; camera x points right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub projection: Projection,
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        projection: Projection,
        rotation: [[f64; 3]; 3],
        translation: Point3,
        principal: [f64; 2],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Camera { projection, rotation, translation, principal, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::validity("camera image extent must be positive"));
        }
        let k = match self.projection {
            Projection::Orthographic { scale } => scale,
            Projection::Pinhole { focal } => focal,
        };
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::validity(format!("camera scale/focal must be positive, got {k}")));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(r[i], r[j]) - want).abs() > 1e-6 {
                    return Err(Error::validity("camera rotation is not orthonormal"));
                }
            }
        }
        let all = r.iter().flatten().chain(&self.translation).chain(&self.principal);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::validity("camera parameters must be finite"));
        }
        Ok(())
    }

    pub fn to_camera_frame(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        let t = self.translation;
        [dot(r[0], p) + t[0], dot(r[1], p) + t[1], dot(r[2], p) + t[2]]
    }

    /// Continuous pixel coordinates and camera-frame depth.
    pub fn project(&self, p: Point3) -> Result<([f64; 2], f64)> {
        let c = self.to_camera_frame(p);
        let [cx, cy] = self.principal;
        match self.projection {
            Projection::Orthographic { scale } => Ok(([scale * c[0] + cx, scale * c[1] + cy], c[2])),
            Projection::Pinhole { focal } => {
                if c[2].abs() < PINHOLE_MIN_DEPTH || c[2] < 0.0 {
                    return Err(Error::DegenerateProjection);
                }
                Ok(([focal * c[0] / c[2] + cx, focal * c[1] / c[2] + cy], c[2]))
            }
        }
    }

    /// Inverse of [`Camera::project`].
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Point3 {
        let (x, y) = match self.projection {
            Projection::Orthographic { scale } => {
                ((pixel[0] - self.principal[0]) / scale, (pixel[1] - self.principal[1]) / scale)
            }
            Projection::Pinhole { focal } => {
                ((pixel[0] - self.principal[0]) * depth / focal, (pixel[1] - self.principal[1]) * depth / focal)
            }
        };
        let q = [x - self.translation[0], y - self.translation[1], depth - self.translation[2]];
        let r = &self.rotation;
        std::array::from_fn(|a| r[0][a] * q[0] + r[1][a] * q[1] + r[2][a] * q[2])
    }

    /// World-space viewing direction (camera +z).
    pub fn forward(&self) -> Point3 {
        self.rotation[2]
    }

    /// Key-value text; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        match self.projection {
            Projection::Orthographic { scale } => {
                let _ = writeln!(s, "model = orthographic\nscale = {scale:?}");
            }
            Projection::Pinhole { focal } => {
                let _ = writeln!(s, "model = pinhole\nfocal = {focal:?}");
            }
        }
        let flat: Vec<f64> = self.rotation.iter().flatten().copied().collect();
        let _ = writeln!(s, "rotation = {}", join(&flat));
        let _ = writeln!(s, "translation = {}", join(&self.translation));
        let _ = writeln!(s, "principal = {}", join(&self.principal));
        let _ = writeln!(s, "extent = {} {}", self.width, self.height);
        s
    }

    pub fn from_text(text: &str) -> Result<Camera> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::parse(format!("camera line without '=': {line}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::parse(format!("camera file missing `{k}`")));
        let nums = |k: &str, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = get(k)?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(format!("camera `{k}`: bad number {t}"))))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(Error::parse(format!("camera `{k}` needs {n} values, got {}", v.len())));
            }
            Ok(v)
        };
        let projection = match get("model")?.as_str() {
            "orthographic" => Projection::Orthographic { scale: nums("scale", 1)?[0] },
            "pinhole" => Projection::Pinhole { focal: nums("focal", 1)?[0] },
            other => return Err(Error::parse(format!("unknown camera model `{other}`"))),
        };
        let r = nums("rotation", 9)?;
        let t = nums("translation", 3)?;
        let c = nums("principal", 2)?;
        let ext: Vec<usize> = get("extent")?
            .split_whitespace()
            .map(|x| x.parse::<usize>().map_err(|_| Error::parse(format!("camera extent: bad value {x}"))))
            .collect::<Result<_>>()?;
        if ext.len() != 2 {
            return Err(Error::parse("camera extent needs width and height"));
        }
        Camera::new(
            projection,
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            [t[0], t[1], t[2]],
            [c[0], c[1]],
            ext[0],
            ext[1],
        )
    }
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let q = deg / 90.0;
    if q == q.round() {
        match (q as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        deg.to_radians().sin_cos()
    }
}

/// Rotation for a camera orbiting the vertical (+y up) axis at `azimuth_deg`,
/// looking toward the axis; azimuth 0 looks along −z.
pub fn orbit_rotation(azimuth_deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = sin_cos_deg(azimuth_deg);
    [[c, 0.0, -s], [0.0, -1.0, 0.0], [-s, 0.0, -c]]
}

/// `views` orthographic cameras evenly spaced in azimuth around `center`, each
/// framing the cube of half-width `half_extent` into a `size`×`size` image.
/// Depth is measured from the plane through `center`.
pub fn orthographic_rig(views: usize, size: usize, center: Point3, half_extent: f64) -> Result<Vec<Camera>> {
    if views == 0 {
        return Err(Error::config("camera rig needs at least one view"));
    }
    if !(half_extent > 0.0) {
        return Err(Error::config("camera rig half extent must be positive"));
    }
    let scale = size as f64 / (2.0 * half_extent);
    (0..views)
        .map(|k| {
            let r = orbit_rotation(360.0 * k as f64 / views as f64);
            let t = [-dot(r[0], center), -dot(r[1], center), -dot(r[2], center)];
            Camera::new(Projection::Orthographic { scale }, r, t, [size as f64 / 2.0, size as f64 / 2.0], size, size)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ID: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn identity_orthographic() {
        let c = Camera::new(Projection::Orthographic { scale: 1.0 }, ID, [0.0; 3], [0.0; 2], 4, 4).unwrap();
        assert_eq!(c.project([1.0, 2.0, 5.0]).unwrap(), ([1.0, 2.0], 5.0));
    }

    #[test]
    fn quarter_turn() {
        let c = Camera::new(Projection::Orthographic { scale: 1.0 }, orbit_rotation(90.0), [0.0; 3], [0.0; 2], 4, 4)
            .unwrap();
        let (px, d) = c.project([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(d.abs(), 1.0);
        assert!(px[0].abs() < 1e-12);
    }

    #[test]
    fn pinhole_division() {
        let c = Camera::new(Projection::Pinhole { focal: 100.0 }, ID, [0.0; 3], [32.0, 32.0], 64, 64).unwrap();
        let (px, d) = c.project([0.1, 0.0, 1.0]).unwrap();
        assert!((px[0] - 42.0).abs() < 1e-12 && px[1] == 32.0 && d == 1.0);
        assert!(matches!(c.project([0.0, 0.0, 0.0]), Err(Error::DegenerateProjection)));
    }

    #[test]
    fn rejects_bad_rotation() {
        let mut r = ID;
        r[0][0] = 1.1;
        assert!(Camera::new(Projection::Orthographic { scale: 1.0 }, r, [0.0; 3], [0.0; 2], 4, 4).is_err());
        assert!(Camera::new(Projection::Orthographic { scale: 1.0 }, ID, [0.0; 3], [0.0; 2], 0, 4).is_err());
    }

    #[test]
    fn text_round_trip() {
        for cam in orthographic_rig(8, 64, [1.5, -2.0, 0.25], 60.0).unwrap() {
            assert_eq!(Camera::from_text(&cam.to_text()).unwrap(), cam);
        }
        let p = Camera::new(
            Projection::Pinhole { focal: 77.7 },
            orbit_rotation(33.0),
            [0.1, 0.2, 90.0],
            [31.5, 30.0],
            64,
            60,
        )
        .unwrap();
        assert_eq!(Camera::from_text(&p.to_text()).unwrap(), p);
        assert!(Camera::from_text("model = fisheye\n").is_err());
    }

    #[test]
    fn rig_azimuths_are_quarter_turns() {
        let rig = orthographic_rig(4, 32, [0.0; 3], 50.0).unwrap();
        let fwd: Vec<Point3> = rig.iter().map(Camera::forward).collect();
        assert_eq!(fwd, vec![[0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        let (px, _) = rig[0].project([0.0, 0.0, 0.0]).unwrap();
        assert_eq!(px, [16.0, 16.0]);
    }
}

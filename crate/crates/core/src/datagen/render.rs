use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, normalize, orthographic_rig, sub, Bvh, Camera, CubeBounds, Projection, TriMesh};
use crate::tensor::Tensor;

/// Ambient term of the headlight shading; lit pixels are never darker.
pub const AMBIENT: f64 = 0.2;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, pixels: vec![0; width * height] }
    }

    /// Pixels covered by the subject.
    pub fn silhouette_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p > 0).count()
    }

    /// `[3, H, W]` tensor in `[0, 1]` with the gray value in every channel.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane: Vec<f32> = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Tensor::from_vec(&[3, self.height, self.width], data).expect("consistent image shape")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::parse(format!("PNG encode: {e}")))?;
        writer.write_image_data(&self.pixels).map_err(|e| Error::parse(format!("PNG encode: {e}")))?;
        writer.finish().map_err(|e| Error::parse(format!("PNG encode: {e}")))?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
        let mut reader =
            decoder.read_info().map_err(|e| Error::parse(format!("PNG decode {}: {e}", path.display())))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info =
            reader.next_frame(&mut buf).map_err(|e| Error::parse(format!("PNG decode {}: {e}", path.display())))?;
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::parse(format!("{} is not an 8-bit grayscale PNG", path.display())));
        }
        buf.truncate(info.buffer_size());
        Ok(GrayImage { width: info.width as usize, height: info.height as usize, pixels: buf })
    }
}

/// Ray-cast one view: nearest hit per pixel center, Lambertian headlight
/// shading on face normals, background exactly 0.
pub fn render_view(bvh: &Bvh, camera: &Camera) -> GrayImage {
    let mesh = bvh.mesh();
    let mut img = GrayImage::new(camera.width, camera.height);
    let fwd = camera.forward();
    let lo_depth = -1e4;
    for v in 0..camera.height {
        for u in 0..camera.width {
            let px = [u as f64 + 0.5, v as f64 + 0.5];
            let (origin, dir) = match camera.projection {
                Projection::Orthographic { .. } => (camera.unproject(px, lo_depth), fwd),
                Projection::Pinhole { .. } => {
                    let o = camera.unproject(camera.principal, 0.0);
                    (o, normalize(sub(camera.unproject(px, 1.0), o)))
                }
            };
            if let Some(hit) = bvh.first_hit(origin, dir) {
                let [a, b, c] = mesh.corners(hit.triangle);
                let n = normalize(cross(sub(b, a), sub(c, a)));
                let shade = AMBIENT + (1.0 - AMBIENT) * (-dot(n, dir)).max(0.0);
                img.pixels[v * camera.width + u] = (255.0 * shade).round().clamp(1.0, 255.0) as u8;
            }
        }
    }
    img
}

/// Renders `views` orthographic views evenly spaced in azimuth (4 = front,
/// left, back, right; 8 adds the diagonals) framing `bounds`.
pub fn render_views(
    mesh: &TriMesh,
    views: usize,
    size: usize,
    bounds: &CubeBounds,
) -> Result<(Vec<GrayImage>, Vec<Camera>)> {
    if size == 0 {
        return Err(Error::config("image extent must be positive"));
    }
    bounds.check_contains(mesh)?;
    let cams = orthographic_rig(views, size, bounds.center(), bounds.half_extent())?;
    let bvh = Bvh::new(mesh);
    let images = cams.iter().map(|c| render_view(&bvh, c)).collect();
    Ok((images, cams))
}

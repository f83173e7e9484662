use crate::error::{Error, Result};
use crate::tensor::kernels::{bilinear_taps, trilinear_taps};

/// Bilinear (`dims = [H, W]`, `location = [x, y]`) or trilinear
/// (`dims = [D, H, W]`, `location = [x, y, z]`) interpolation of a
/// channel-major lattice. Locations are in node units and clamp to the lattice.
pub fn interp_grid(values: &[f64], channels: usize, dims: &[usize], location: &[f64]) -> Result<Vec<f64>> {
    let plane: usize = dims.iter().product();
    if dims.contains(&0) || values.len() != channels * plane || dims.len() != location.len() {
        return Err(Error::config(format!(
            "lattice of {} values does not match {channels} channels × {dims:?} with a {}-D location",
            values.len(),
            location.len()
        )));
    }
    let taps: Vec<(usize, f64)> = match dims {
        [h, w] => bilinear_taps::<f64>(location[0], location[1], *h, *w).to_vec(),
        [d, h, w] => trilinear_taps::<f64>(location[0], location[1], location[2], *d, *h, *w).to_vec(),
        _ => return Err(Error::config("interpolation supports 2-D and 3-D lattices only")),
    };
    Ok((0..channels)
        .map(|c| {
            let base = &values[c * plane..(c + 1) * plane];
            taps.iter().map(|&(i, w)| w * base[i]).sum()
        })
        .collect())
}

use std::path::Path;

use crate::error::{FwiError, Result};
use crate::grid::NodalField;
use crate::io::{format_real_field, FieldFormat};

/// Gaussian filter with standard deviation `sigma` (in nodes), truncated
/// at `4σ` and renormalised where the kernel leaves the grid, so constant
/// fields are preserved. Applied axis by axis; the truncated product kernel
/// renormalises per axis exactly as the full kernel would.
pub fn gaussian_smooth(field: &NodalField, sigma: f64) -> Result<NodalField> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(FwiError::Numeric(format!("smoothing sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let grid = field.grid;
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let mut values = field.values.clone();
    for axis in 0..grid.dim() {
        let n = grid.nodes()[axis] as isize;
        let mut next = vec![0.0; values.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let m = grid.multi_index(i);
            let (mut acc, mut norm) = (0.0, 0.0);
            for (t, w) in kernel.iter().enumerate() {
                let p = m[axis] as isize + t as isize - radius;
                if p < 0 || p >= n {
                    continue;
                }
                let mut q = m;
                q[axis] = p as usize;
                acc += w * values[grid.index(q)];
                norm += w;
            }
            *out = acc / norm;
        }
        values = next;
    }
    NodalField::new(grid, values, &field.unit)
}

/// Writes `field`, optionally smoothed, in the requested format.
pub fn export_field(field: &NodalField, format: &str, sigma: Option<f64>, path: &Path) -> Result<()> {
    let format: FieldFormat = format.parse()?;
    let smoothed = gaussian_smooth(field, sigma.unwrap_or(0.0))?;
    std::fs::write(path, format_real_field(&smoothed, format))?;
    Ok(())
}

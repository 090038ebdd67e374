//! Parameter grids: `start:stop:step` (inclusive), a comma list, or a single value.

use anyhow::{bail, Context, Result};

pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("bad number {s:?} in grid {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let out = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if !(h > 0.0) || b < a {
                bail!("grid {spec:?} needs start <= stop and a positive step");
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            if n > 1_000_000 {
                bail!("grid {spec:?} has too many points");
            }
            // Round away accumulated float noise so 0:0.45:0.05 prints cleanly.
            (0..=n).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect()
        }
        [list] => list.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<_>>>()?,
        _ => bail!("grid {spec:?} must be start:stop:step or a comma list"),
    };
    if out.is_empty() {
        bail!("grid {spec:?} is empty");
    }
    if out.iter().any(|x| !x.is_finite()) {
        bail!("grid {spec:?} has non-finite values");
    }
    Ok(out)
}

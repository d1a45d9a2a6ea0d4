//! Colour-wheel rendering of flow fields.

use ::image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::flow::FlowField;

/// Renders the first batch item: hue is the direction `atan2(v, u)`,
/// saturation the magnitude divided by `cap` (the field's largest magnitude
/// when `None`), value is always full. Zero flow is white and `+u` is red.
pub fn visualize_flow(flow: &FlowField, cap: Option<f64>) -> Result<RgbImage> {
    flow.check_finite()?;
    let (h, w) = (flow.height(), flow.width());
    let d = flow.tensor().data();
    let uv = |p: usize| (d[p] as f64, d[h * w + p] as f64);
    let max = match cap {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(Error::InvalidArgument(format!("magnitude cap must be positive, got {c}"))),
        None => (0..h * w).map(|p| uv(p).0.hypot(uv(p).1)).fold(0.0, f64::max),
    };
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (u, v) = uv(y as usize * w + x as usize);
        let mag = u.hypot(v);
        let sat = if max > 0.0 { (mag / max).min(1.0) } else { 0.0 };
        let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
        Rgb(hsv_to_rgb(hue, sat))
    }))
}

/// HSV with value 1 to 8-bit RGB.
fn hsv_to_rgb(hue: f64, sat: f64) -> [u8; 3] {
    let sector = hue / 60.0;
    let f = sector - sector.floor();
    let (p, q, t) = (1.0 - sat, 1.0 - sat * f, 1.0 - sat * (1.0 - f));
    let (r, g, b) = match sector as u32 % 6 {
        0 => (1.0, t, p),
        1 => (q, 1.0, p),
        2 => (p, 1.0, t),
        3 => (p, q, 1.0),
        4 => (t, p, 1.0),
        _ => (1.0, p, q),
    };
    let byte = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    [byte(r), byte(g), byte(b)]
}

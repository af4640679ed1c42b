//! Binary PPM (P6) rendering of surfaces.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gradfield_core::SurfaceGrid;

const MISSING: [u8; 3] = [128, 128, 128];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ramp {
    /// Blue through white to red, symmetric about zero.
    Diverging,
    /// White to dark red over a fixed range.
    Sequential { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, top row first.
    pub pixels: Vec<u8>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub label: String,
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|k| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * t).round() as u8)
}

fn colour(v: f64, ramp: Ramp, bound: f64) -> [u8; 3] {
    const BLUE: [u8; 3] = [33, 102, 172];
    const WHITE: [u8; 3] = [247, 247, 247];
    const RED: [u8; 3] = [178, 24, 43];
    match ramp {
        Ramp::Diverging => {
            let t = if bound > 0.0 { (v / bound).clamp(-1.0, 1.0) } else { 0.0 };
            if t < 0.0 {
                lerp(WHITE, BLUE, -t)
            } else {
                lerp(WHITE, RED, t)
            }
        }
        Ramp::Sequential { lo, hi } => lerp(WHITE, RED, (v - lo) / (hi - lo)),
    }
}

impl HeatmapImage {
    /// One `scale × scale` block per cell; the top row holds the largest `s2`.
    pub fn render(surface: &SurfaceGrid, ramp: Ramp, scale: usize) -> Result<Self> {
        if scale == 0 {
            bail!("heatmap scale must be at least 1");
        }
        let g = &surface.grid;
        let (width, height) = (g.nx * scale, g.ny * scale);
        let mm = surface.min_max();
        // Infinite medians saturate the ramp.
        let bound = mm.map(|(lo, hi)| lo.abs().max(hi.abs())).unwrap_or(0.0);
        let mut pixels = Vec::with_capacity(width * height * 3);
        for row in 0..height {
            let j = g.ny - 1 - row / scale;
            for col in 0..width {
                let rgb = match surface.values[g.index(col / scale, j)] {
                    Some(v) if !v.is_nan() => colour(v, ramp, bound),
                    _ => MISSING,
                };
                pixels.extend_from_slice(&rgb);
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
            min: mm.map(|m| m.0),
            max: mm.map(|m| m.1),
            label: surface.label.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_else(|| "NA".into());
        let mut out = Vec::with_capacity(self.pixels.len() + 128);
        out.extend_from_slice(b"P6\n");
        out.extend_from_slice(format!("# {}\n", self.label.replace('\n', " ")).as_bytes());
        out.extend_from_slice(format!("# min {}\n# max {}\n", fmt(self.min), fmt(self.max)).as_bytes());
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(&self.to_bytes())
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Width, height and pixel offset of a P6 file.
pub fn parse_ppm_header(bytes: &[u8]) -> Result<(usize, usize, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 && i < bytes.len() {
        match bytes[i] {
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_whitespace() => {}
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
                continue;
            }
        }
        i += 1;
    }
    if tokens.len() < 4 || tokens[0] != "P6" {
        bail!("not a P6 image");
    }
    Ok((tokens[1].parse()?, tokens[2].parse()?, i + 1))
}

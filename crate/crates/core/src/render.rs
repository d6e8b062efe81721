//! Scene descriptions and a top-down orthographic rasterizer.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const FRAME_SIZE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Color(pub [u8; 3]);

impl Color {
    pub const BACKGROUND: Color = Color([34, 110, 44]);
    pub const ROAD: Color = Color([70, 70, 74]);
    pub const BOARD: Color = Color([12, 12, 24]);
    pub const MARKING: Color = Color([235, 235, 235]);
    pub const TRAFFIC: Color = Color([60, 120, 220]);
    pub const EGO: Color = Color([240, 200, 30]);
}

/// An axis-aligned or rotated rectangle in world units. `heading` rotates
/// the long axis away from +y toward +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub length: f64,
    pub heading: f64,
    pub color: Color,
}

impl Entity {
    pub fn rect(kind: &str, x: f64, y: f64, width: f64, length: f64, heading: f64, color: Color) -> Self {
        Self { kind: kind.to_string(), x, y, width, length, heading, color }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub env: String,
    /// Lower-left and upper-right corners of the square view, world units.
    pub view_min: (f64, f64),
    pub view_max: (f64, f64),
    /// Painted in order.
    pub entities: Vec<Entity>,
}

impl Scene {
    pub fn new(env: &str, view_min: (f64, f64), view_max: (f64, f64), entities: Vec<Entity>) -> Self {
        Self { env: env.to_string(), view_min, view_max, entities }
    }

    pub fn rasterize(&self) -> RgbImage {
        let size = FRAME_SIZE;
        let mut img = RgbImage::from_pixel(size, size, Rgb(Color::BACKGROUND.0));
        let span_x = self.view_max.0 - self.view_min.0;
        let span_y = self.view_max.1 - self.view_min.1;
        let scale = f64::from(size) / span_x.max(span_y);
        for e in &self.entities {
            let (s, c) = e.heading.sin_cos();
            let (hw, hl) = (e.width / 2.0, e.length / 2.0);
            let reach = hw.hypot(hl);
            let to_px = |wx: f64, wy: f64| ((wx - self.view_min.0) * scale, (self.view_max.1 - wy) * scale);
            let (cx, cy) = to_px(e.x, e.y);
            let r = reach * scale;
            let x0 = (cx - r).floor().max(0.0) as u32;
            let x1 = ((cx + r).ceil().max(0.0) as u32).min(size);
            let y0 = (cy - r).floor().max(0.0) as u32;
            let y1 = ((cy + r).ceil().max(0.0) as u32).min(size);
            for py in y0..y1 {
                for px in x0..x1 {
                    // pixel center back to world, then into the entity frame
                    let wx = self.view_min.0 + (f64::from(px) + 0.5) / scale - e.x;
                    let wy = self.view_max.1 - (f64::from(py) + 0.5) / scale - e.y;
                    let along = wx * s + wy * c;
                    let across = wx * c - wy * s;
                    if along.abs() <= hl && across.abs() <= hw {
                        img.put_pixel(px, py, Rgb(e.color.0));
                    }
                }
            }
        }
        img
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.rasterize().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.png_bytes()?)?;
        Ok(())
    }
}

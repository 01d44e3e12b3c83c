//! Top-down raster of a frame with proposal boxes.

use std::path::Path;

use anyhow::Result;
use image::{Rgb, RgbImage};
use lidarprop::ingest::ObjectClass;
use lidarprop::pipeline::FrameResult;
use lidarprop::{Box3D, PointCloud};

/// Forward (+x) points up the image and left (+y) to the left.
pub struct View {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub pixels_per_metre: f64,
}

impl View {
    fn size(&self) -> (u32, u32) {
        let w = ((self.y_range.1 - self.y_range.0) * self.pixels_per_metre).ceil() as u32;
        let h = ((self.x_range.1 - self.x_range.0) * self.pixels_per_metre).ceil() as u32;
        (w.max(1), h.max(1))
    }

    fn pixel(&self, x: f64, y: f64) -> Option<(u32, u32)> {
        let (w, h) = self.size();
        let col = ((self.y_range.1 - y) * self.pixels_per_metre).floor();
        let row = ((self.x_range.1 - x) * self.pixels_per_metre).floor();
        (col >= 0.0 && row >= 0.0 && col < w as f64 && row < h as f64).then_some((col as u32, row as u32))
    }
}

fn class_colour(class: Option<ObjectClass>) -> Rgb<u8> {
    match class {
        Some(ObjectClass::Car) => Rgb([230, 60, 50]),
        Some(ObjectClass::Van) => Rgb([240, 150, 30]),
        Some(ObjectClass::Pedestrian) => Rgb([60, 200, 80]),
        Some(ObjectClass::Cyclist) => Rgb([70, 140, 255]),
        Some(ObjectClass::Background) => Rgb([150, 150, 150]),
        None => Rgb([255, 230, 60]),
    }
}

fn draw_box(img: &mut RgbImage, view: &View, b: &Box3D, colour: Rgb<u8>) {
    let step = 0.5 / view.pixels_per_metre;
    let [x0, y0, _] = b.min;
    let [x1, y1, _] = b.max;
    let mut put = |x: f64, y: f64| {
        if let Some((c, r)) = view.pixel(x, y) {
            img.put_pixel(c, r, colour);
        }
    };
    let nx = ((x1 - x0) / step).ceil() as usize;
    for i in 0..=nx {
        let x = (x0 + i as f64 * step).min(x1);
        put(x, y0);
        put(x, y1);
    }
    let ny = ((y1 - y0) / step).ceil() as usize;
    for i in 0..=ny {
        let y = (y0 + i as f64 * step).min(y1);
        put(x0, y);
        put(x1, y);
    }
}

fn plot(img: &mut RgbImage, view: &View, cloud: &PointCloud, colour: Rgb<u8>) {
    for p in cloud.points() {
        if let Some((c, r)) = view.pixel(p.x, p.y) {
            img.put_pixel(c, r, colour);
        }
    }
}

/// Ground returns dim, the rest bright, kept proposals outlined in the
/// colour of their class (yellow when unclassified).
pub fn render(full: &PointCloud, result: &FrameResult, view: &View) -> RgbImage {
    let (w, h) = view.size();
    let mut img = RgbImage::from_pixel(w, h, Rgb([12, 12, 16]));
    plot(&mut img, view, full, Rgb([70, 70, 80]));
    plot(&mut img, view, &result.cloud, Rgb([225, 225, 225]));
    for p in &result.kept {
        draw_box(&mut img, view, &p.bbox, class_colour(p.class().map(|c| c.0)));
    }
    if let Some((c, r)) = view.pixel(0.0, 0.0) {
        img.put_pixel(c, r, Rgb([255, 0, 255]));
    }
    img
}

pub fn save(full: &PointCloud, result: &FrameResult, view: &View, path: &Path) -> Result<()> {
    render(full, result, view).save(path)?;
    Ok(())
}

use image::{Rgb, RgbImage};

use super::scene::{Cell, Location, Scene, SceneObject, CATALOG, COLORS};
use crate::error::{Error, Result};

const ZONE_TINTS: [[u8; 3]; 6] = [
    [236, 226, 208],
    [222, 222, 232],
    [214, 232, 214],
    [206, 226, 240],
    [240, 222, 230],
    [228, 228, 228],
];
const AGENT: [u8; 3] = [70, 70, 70];
const OPEN_MARK: [u8; 3] = [255, 255, 255];
const CLOSED_MARK: [u8; 3] = [20, 20, 20];
const DIRT: [u8; 3] = [110, 70, 30];

struct Canvas<'a> {
    img: &'a mut RgbImage,
    cw: u32,
    ch: u32,
}

impl Canvas<'_> {
    fn origin(&self, c: Cell) -> (u32, u32) {
        (c.x as u32 * self.cw, c.y as u32 * self.ch)
    }

    fn fill(&mut self, x0: u32, y0: u32, w: u32, h: u32, rgb: [u8; 3]) {
        for y in y0..(y0 + h) {
            for x in x0..(x0 + w) {
                self.img.put_pixel(x, y, Rgb(rgb));
            }
        }
    }

    /// Draws a 3x3 code with `px`-sized bits starting at (x0, y0).
    fn code(&mut self, code: u16, x0: u32, y0: u32, px: u32, rgb: [u8; 3]) {
        for bit in 0..9u32 {
            if code & (1 << (8 - bit)) != 0 {
                self.fill(x0 + (bit % 3) * px, y0 + (bit / 3) * px, px, px, rgb);
            }
        }
    }

    fn object(&mut self, cell: Cell, o: &SceneObject) {
        let (x0, y0) = self.origin(cell);
        let px = ((self.cw.min(self.ch)).saturating_sub(2) / 3).max(1);
        let (gx, gy) = (x0 + (self.cw - 3 * px) / 2, y0 + (self.ch - 3 * px) / 2);
        let cls = o.class();
        self.code(cls.code, gx, gy, px, COLORS[o.color].1);
        if let Some(open) = o.open {
            let mark = if open { OPEN_MARK } else { CLOSED_MARK };
            self.fill(gx + px, gy + px, px, px, mark);
        }
        if o.dirty == Some(true) {
            self.fill(gx, gy, 1, 1, DIRT);
            self.fill(gx + 3 * px - 1, gy + 3 * px - 1, 1, 1, DIRT);
        }
    }

    /// Small marker for a held or contained object in a cell corner.
    fn mini(&mut self, cell: Cell, o: &SceneObject, bottom_right: bool) {
        let (x0, y0) = self.origin(cell);
        let px = (self.cw.min(self.ch) / 8).max(1);
        let (mx, my) = if bottom_right {
            (x0 + self.cw - 3 * px, y0 + self.ch - 3 * px)
        } else {
            (x0, y0)
        };
        self.fill(mx, my, 3 * px, 3 * px, [0, 0, 0]);
        self.code(CATALOG[o.class].code, mx, my, px, COLORS[o.color].1);
    }
}

/// Rasterises `scene` to a square image `resolution` pixels wide.
///
/// Every cell is drawn only from the state of that cell, so scenes that
/// differ in one object differ only inside the cells it touches.
pub fn render(scene: &Scene, resolution: u32) -> Result<RgbImage> {
    let (w, h) = (scene.width as u32, scene.height as u32);
    if w == 0 || h == 0 || resolution % w != 0 || resolution % h != 0 {
        return Err(Error::config(format!(
            "resolution {resolution} is not a multiple of grid {w}x{h}"
        )));
    }
    let mut img = RgbImage::new(resolution, resolution);
    let mut canvas = Canvas {
        img: &mut img,
        cw: resolution / w,
        ch: resolution / h,
    };
    for cell in scene.cells() {
        let (x0, y0) = canvas.origin(cell);
        let (cw, ch) = (canvas.cw, canvas.ch);
        canvas.fill(x0, y0, cw, ch, ZONE_TINTS[scene.zone(cell)]);
    }
    for (i, o) in scene.objects.iter().enumerate() {
        if let Location::Cell(c) = o.location {
            canvas.object(c, o);
            if let Some(inner) = scene.contents(i) {
                canvas.mini(c, &scene.objects[inner], true);
            }
        }
    }
    let agent = scene.agent.cell;
    let (x0, y0) = canvas.origin(agent);
    let (cw, ch) = (canvas.cw, canvas.ch);
    canvas.fill(x0 + cw / 2 - cw / 8, y0, (cw / 4).max(1), ch, AGENT);
    canvas.fill(x0, y0 + ch / 2 - ch / 8, cw, (ch / 4).max(1), AGENT);
    if let Some(hi) = scene.agent.held {
        canvas.mini(agent, &scene.objects[hi], false);
    }
    Ok(img)
}

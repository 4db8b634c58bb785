use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ANNULUS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RegionShape {
    Rect { x: usize, y: usize, w: usize, h: usize },
    Polygon { vertices: Vec<[i64; 2]> },
}

/// Occluded area plus the band of known pixels around it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    #[serde(flatten)]
    pub shape: RegionShape,
    #[serde(default = "default_annulus")]
    pub annulus_width: usize,
}

fn default_annulus() -> usize {
    DEFAULT_ANNULUS
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.x + other.w && other.x < self.x + self.w && self.y < other.y + other.h && other.y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// Nearest positive multiple of 8.
pub fn snap8(v: usize) -> usize {
    (((v as f64) / 8.0).round() as usize).max(1) * 8
}

/// Smallest occluded extent the generator can cover (seed extent 10).
pub const MIN_EXTENT: usize = 32;

fn round_up8(v: usize) -> usize {
    (v.div_ceil(8) * 8).max(MIN_EXTENT)
}

/// Boolean mask over a region's generator window (row-major).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

impl Region {
    pub fn rect(x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        let r = Self { shape: RegionShape::Rect { x, y, w, h }, annulus_width: DEFAULT_ANNULUS };
        r.check_shape()?;
        Ok(r)
    }

    pub fn polygon(vertices: Vec<[i64; 2]>) -> Result<Self> {
        let r = Self { shape: RegionShape::Polygon { vertices }, annulus_width: DEFAULT_ANNULUS };
        r.check_shape()?;
        Ok(r)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Region = serde_json::from_str(s).map_err(|e| Error::InvalidRegion(e.to_string()))?;
        r.check_shape()?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("region serialises")
    }

    pub fn is_rect(&self) -> bool {
        matches!(self.shape, RegionShape::Rect { .. })
    }

    /// Shape-only invariants (no image bounds).
    pub fn check_shape(&self) -> Result<()> {
        if self.annulus_width == 0 || self.annulus_width % 4 != 0 {
            return Err(Error::InvalidRegion(format!(
                "annulus width {} must be a positive multiple of 4",
                self.annulus_width
            )));
        }
        match &self.shape {
            RegionShape::Rect { w, h, .. } => {
                if *w == 0 || *h == 0 || w % 8 != 0 || h % 8 != 0 {
                    return Err(Error::InvalidRegion(format!(
                        "rectangle {w}x{h} must have sides that are positive multiples of 8 (nearest: {}x{})",
                        snap8(*w),
                        snap8(*h)
                    )));
                }
            }
            RegionShape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::InvalidRegion("polygon needs at least 3 vertices".into()));
                }
                if vertices.iter().any(|v| v[0] < 0 || v[1] < 0) {
                    return Err(Error::InvalidRegion("polygon vertices must be non-negative".into()));
                }
                if !is_simple(vertices) {
                    return Err(Error::InvalidRegion("polygon edges intersect".into()));
                }
                if polygon_area2(vertices) == 0 {
                    return Err(Error::InvalidRegion("polygon has zero area".into()));
                }
            }
        }
        Ok(())
    }

    /// Full validation against an image of the given size.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        self.check_shape()?;
        let (x0, y0, w, h) = self.window_signed();
        if x0 < 0 || y0 < 0 || x0 as usize + w > width || y0 as usize + h > height {
            return Err(Error::InvalidRegion(format!(
                "window {w}x{h} at ({x0},{y0}) (region plus {} px annulus) leaves the {width}x{height} image",
                self.annulus_width
            )));
        }
        if self.annulus_mask().count() == 0 {
            return Err(Error::InvalidRegion("annulus is empty".into()));
        }
        if self.occluded_count() == 0 {
            return Err(Error::InvalidRegion("region covers no pixel centres".into()));
        }
        Ok(())
    }

    /// Bounding box of the occluded area. For polygons it is rounded up to a
    /// multiple of 8 (at least [`MIN_EXTENT`]), extended to the right and bottom.
    pub fn core(&self) -> Rect {
        match &self.shape {
            RegionShape::Rect { x, y, w, h } => Rect { x: *x, y: *y, w: *w, h: *h },
            RegionShape::Polygon { vertices } => {
                let (min_x, max_x) = min_max(vertices.iter().map(|v| v[0]));
                let (min_y, max_y) = min_max(vertices.iter().map(|v| v[1]));
                Rect {
                    x: min_x as usize,
                    y: min_y as usize,
                    w: round_up8((max_x - min_x) as usize),
                    h: round_up8((max_y - min_y) as usize),
                }
            }
        }
    }

    fn window_signed(&self) -> (i64, i64, usize, usize) {
        let c = self.core();
        let a = self.annulus_width;
        (c.x as i64 - a as i64, c.y as i64 - a as i64, c.w + 2 * a, c.h + 2 * a)
    }

    /// Generator window: the core box expanded by the annulus on every side.
    /// Only meaningful after [`Region::validate`] has passed.
    pub fn window(&self) -> Rect {
        let (x, y, w, h) = self.window_signed();
        Rect { x: x.max(0) as usize, y: y.max(0) as usize, w, h }
    }

    /// Whether image pixel `(x, y)` is occluded.
    pub fn is_occluded(&self, x: usize, y: usize) -> bool {
        match &self.shape {
            RegionShape::Rect { .. } => self.core().contains(x, y),
            RegionShape::Polygon { vertices } => point_in_polygon(vertices, x as f64 + 0.5, y as f64 + 0.5),
        }
    }

    pub fn occluded_count(&self) -> usize {
        let w = self.window();
        (w.y..w.y + w.h)
            .flat_map(|y| (w.x..w.x + w.w).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_occluded(x, y))
            .count()
    }

    /// Known pixels of the window used as the boundary-matching target.
    ///
    /// Rectangles: the window minus the occluded rectangle. Polygons: every
    /// window pixel outside the polygon.
    pub fn annulus_mask(&self) -> Mask {
        let win = self.window();
        let mut bits = Vec::with_capacity(win.area());
        for y in 0..win.h {
            for x in 0..win.w {
                bits.push(!self.is_occluded(win.x + x, win.y + y));
            }
        }
        Mask { width: win.w, height: win.h, bits }
    }
}

fn min_max(it: impl Iterator<Item = i64>) -> (i64, i64) {
    it.fold((i64::MAX, i64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn polygon_area2(v: &[[i64; 2]]) -> i64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<i64>()
        .abs()
}

/// Even-odd rule.
pub fn point_in_polygon(v: &[[i64; 2]], px: f64, py: f64) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (v[i][0] as f64, v[i][1] as f64);
        let (xj, yj) = (v[j][0] as f64, v[j][1] as f64);
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn orient(a: [i64; 2], b: [i64; 2], c: [i64; 2]) -> i64 {
    ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).signum()
}

fn on_segment(a: [i64; 2], b: [i64; 2], p: [i64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [i64; 2], b: [i64; 2], c: [i64; 2], d: [i64; 2]) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0 {
        return true;
    }
    (o1 == 0 && on_segment(a, b, c))
        || (o2 == 0 && on_segment(a, b, d))
        || (o3 == 0 && on_segment(c, d, a))
        || (o4 == 0 && on_segment(c, d, b))
}

/// No two edges meet except adjacent edges at their shared vertex.
pub fn is_simple(v: &[[i64; 2]]) -> bool {
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            let (c, d) = (v[j], v[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // adjacent edges may only share their common vertex
                let (shared, other_a, other_b) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if orient(other_a, shared, other_b) == 0
                    && (on_segment(shared, other_a, other_b) || on_segment(shared, other_b, other_a))
                {
                    return false;
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_annulus_count() {
        let r = Region::rect(40, 40, 64, 64).unwrap();
        let m = r.annulus_mask();
        assert_eq!((m.width, m.height), (96, 96));
        assert_eq!(m.count(), 96 * 96 - 64 * 64);
        assert_eq!(m.count(), 5120);
    }

    #[test]
    fn rect_must_be_multiple_of_8() {
        let e = Region::rect(0, 0, 63, 64).unwrap_err().to_string();
        assert!(e.contains("64x64"), "{e}");
        assert!(Region::rect(0, 0, 0, 8).is_err());
    }

    #[test]
    fn snapping() {
        assert_eq!(snap8(63), 64);
        assert_eq!(snap8(60), 64);
        assert_eq!(snap8(66), 64);
        assert_eq!(snap8(1), 8);
    }

    #[test]
    fn polygon_matching_rect_is_identical() {
        let p = Region::polygon(vec![[40, 40], [104, 40], [104, 104], [40, 104]]).unwrap();
        let r = Region::rect(40, 40, 64, 64).unwrap();
        assert_eq!(p.window(), r.window());
        assert_eq!(p.annulus_mask(), r.annulus_mask());
    }

    #[test]
    fn self_intersecting_polygon_rejected() {
        assert!(Region::polygon(vec![[0, 0], [10, 10], [10, 0], [0, 10]]).is_err());
        assert!(Region::polygon(vec![[0, 0], [10, 0]]).is_err());
        assert!(Region::polygon(vec![[0, 0], [5, 0], [10, 0]]).is_err());
        assert!(Region::polygon(vec![[20, 20], [40, 20], [30, 40]]).is_ok());
    }

    #[test]
    fn window_must_fit() {
        let r = Region::rect(8, 8, 64, 64).unwrap();
        assert!(r.validate(256, 256).is_err());
        let r = Region::rect(16, 16, 64, 64).unwrap();
        assert!(r.validate(96, 96).is_ok());
        assert!(r.validate(95, 96).is_err());
    }

    #[test]
    fn json_formats() {
        let r = Region::from_json(r#"{"shape":"rect","x":32,"y":32,"w":64,"h":64}"#).unwrap();
        assert_eq!(r, Region::rect(32, 32, 64, 64).unwrap());
        let p = Region::from_json(r#"{"shape":"polygon","vertices":[[20,20],[60,20],[40,50]]}"#).unwrap();
        assert!(!p.is_rect());
        let back = Region::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert!(Region::from_json(r#"{"shape":"rect","x":0,"y":0,"w":63,"h":64}"#).is_err());
    }

    #[test]
    fn polygon_window_rounds_up() {
        let p = Region::polygon(vec![[30, 30], [50, 30], [40, 45]]).unwrap();
        let c = p.core();
        assert_eq!((c.w, c.h), (32, 32));
        assert_eq!(p.window(), Rect { x: 14, y: 14, w: 64, h: 64 });
        let p = Region::polygon(vec![[30, 30], [71, 30], [40, 75]]).unwrap();
        assert_eq!((p.core().w, p.core().h), (48, 48));
    }
}

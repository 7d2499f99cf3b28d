//! Deterministic rasterizer for puzzle panels.
//!
//! Rendering must be bit-identical across platforms, so the only floating
//! point involved is plain IEEE-754 arithmetic plus a frozen sine table for
//! the 3-degree grid that every vertex angle lands on (rotations are 45-degree
//! steps and interior polygon angles are 360/n for n in {3,4,5,6}).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::PanelAttributes;

/// sin(3k degrees) for k = 0..119, nearest f64 to the true value. The exact
/// zeros are pinned so that e.g. sin(180) is 0.0, not a sub-epsilon residue.
#[rustfmt::skip]
const SIN_3DEG: [f64; 120] = [
    0.0, 0.052335956242943835, 0.10452846326765347, 0.15643446504023087,
    0.20791169081775934, 0.25881904510252074, 0.30901699437494745, 0.35836794954530027,
    0.4067366430758002, 0.4539904997395468, 0.5, 0.5446390350150271,
    0.5877852522924731, 0.6293203910498375, 0.6691306063588582, 0.7071067811865476,
    0.7431448254773942, 0.7771459614569709, 0.8090169943749475, 0.838670567945424,
    0.8660254037844386, 0.8910065241883679, 0.9135454576426009, 0.9335804264972017,
    0.9510565162951535, 0.9659258262890683, 0.9781476007338057, 0.9876883405951378,
    0.9945218953682733, 0.9986295347545738, 1.0, 0.9986295347545738,
    0.9945218953682733, 0.9876883405951378, 0.9781476007338057, 0.9659258262890683,
    0.9510565162951535, 0.9335804264972017, 0.9135454576426009, 0.8910065241883679,
    0.8660254037844386, 0.838670567945424, 0.8090169943749475, 0.7771459614569709,
    0.7431448254773942, 0.7071067811865476, 0.6691306063588582, 0.6293203910498375,
    0.5877852522924731, 0.5446390350150271, 0.5, 0.4539904997395468,
    0.4067366430758002, 0.35836794954530027, 0.30901699437494745, 0.25881904510252074,
    0.20791169081775934, 0.15643446504023087, 0.10452846326765347, 0.052335956242943835,
    0.0, -0.052335956242943835, -0.10452846326765347, -0.15643446504023087,
    -0.20791169081775934, -0.25881904510252074, -0.30901699437494745, -0.35836794954530027,
    -0.4067366430758002, -0.4539904997395468, -0.5, -0.5446390350150271,
    -0.5877852522924731, -0.6293203910498375, -0.6691306063588582, -0.7071067811865476,
    -0.7431448254773942, -0.7771459614569709, -0.8090169943749475, -0.838670567945424,
    -0.8660254037844386, -0.8910065241883679, -0.9135454576426009, -0.9335804264972017,
    -0.9510565162951535, -0.9659258262890683, -0.9781476007338057, -0.9876883405951378,
    -0.9945218953682733, -0.9986295347545738, -1.0, -0.9986295347545738,
    -0.9945218953682733, -0.9876883405951378, -0.9781476007338057, -0.9659258262890683,
    -0.9510565162951535, -0.9335804264972017, -0.9135454576426009, -0.8910065241883679,
    -0.8660254037844386, -0.838670567945424, -0.8090169943749475, -0.7771459614569709,
    -0.7431448254773942, -0.7071067811865476, -0.6691306063588582, -0.6293203910498375,
    -0.5877852522924731, -0.5446390350150271, -0.5, -0.4539904997395468,
    -0.4067366430758002, -0.35836794954530027, -0.30901699437494745, -0.25881904510252074,
    -0.20791169081775934, -0.15643446504023087, -0.10452846326765347, -0.052335956242943835,
];

/// Gray level per shade value; shade 0 is the lightest.
const SHADE_LEVELS: [u8; 5] = [200, 150, 100, 50, 0];

/// 2x2 layout cells in fill order (row, col): TL, TR, BL, BR.
const FILL_ORDER: [(u32, u32); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

const SUPERSAMPLE: u32 = 4;

fn sin_deg(deg: i64) -> f64 {
    let d = deg.rem_euclid(360);
    debug_assert!(d % 3 == 0, "angle {deg} is off the 3-degree grid");
    SIN_3DEG[(d / 3) as usize]
}

fn cos_deg(deg: i64) -> f64 {
    sin_deg(deg + 90)
}

enum Outline {
    Polygon(Vec<(f64, f64)>),
    Circle { cx: f64, cy: f64, r2: f64 },
}

impl Outline {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Outline::Circle { cx, cy, r2 } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= *r2
            }
            Outline::Polygon(pts) => {
                // Convex containment: the point must lie on one side of every
                // edge. Vertices are emitted in a consistent winding, but the
                // check is orientation-agnostic so the y-down raster frame
                // needs no special casing.
                let n = pts.len();
                let (mut non_neg, mut non_pos) = (true, true);
                for i in 0..n {
                    let (x1, y1) = pts[i];
                    let (x2, y2) = pts[(i + 1) % n];
                    let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
                    non_neg &= cross >= 0.0;
                    non_pos &= cross <= 0.0;
                }
                non_neg || non_pos
            }
        }
    }
}

/// Rasterizes one panel to `image_size * image_size` gray bytes, row-major,
/// white background. 4x4 supersampling; all arithmetic is exact-input IEEE
/// f64, so outputs are identical across platforms.
pub fn render_panel(attrs: &PanelAttributes, image_size: u32) -> Vec<u8> {
    assert!(image_size >= 16, "image_size must be at least 16");
    assert!(attrs.is_valid(), "invalid attributes {attrs:?}");
    let s = image_size;
    let mut buf = vec![255u8; (s * s) as usize];
    let level = SHADE_LEVELS[attrs.shade as usize] as u32;
    let half_cell = s as f64 / 4.0;
    let radius = half_cell * (2 + attrs.size) as f64 / 8.0;

    for copy in 0..attrs.count as usize {
        let (row, col) = FILL_ORDER[copy];
        let cx = s as f64 * (0.25 + 0.5 * col as f64);
        let cy = s as f64 * (0.25 + 0.5 * row as f64);
        let outline = match attrs.shape_type.sides() {
            None => Outline::Circle { cx, cy, r2: radius * radius },
            Some(n) => {
                let pts = (0..n as i64)
                    .map(|i| {
                        let deg = 90 + 45 * attrs.rotation as i64 + i * (360 / n as i64);
                        (cx + radius * cos_deg(deg), cy - radius * sin_deg(deg))
                    })
                    .collect();
                Outline::Polygon(pts)
            }
        };
        let x0 = ((cx - radius - 1.0).floor().max(0.0)) as u32;
        let y0 = ((cy - radius - 1.0).floor().max(0.0)) as u32;
        let x1 = ((cx + radius + 1.0).ceil() as u32).min(s - 1);
        let y1 = ((cy + radius + 1.0).ceil() as u32).min(s - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let mut covered = 0u32;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        if outline.contains(x, y) {
                            covered += 1;
                        }
                    }
                }
                if covered > 0 {
                    let total = SUPERSAMPLE * SUPERSAMPLE;
                    let val = (255 * (total - covered) + level * covered + total / 2) / total;
                    let idx = (py * s + px) as usize;
                    buf[idx] = buf[idx].min(val as u8);
                }
            }
        }
    }
    buf
}

/// Memoizes rendered panels across a dataset build. Only a few thousand
/// attribute tuples exist per image size, so generation cost collapses to a
/// hash lookup after warm-up. Safe to share across worker threads; cache hits
/// never alter output bytes.
pub struct RenderCache {
    map: Mutex<HashMap<(u32, PanelAttributes), Arc<Vec<u8>>>>,
}

impl RenderCache {
    pub fn new() -> Self {
        RenderCache { map: Mutex::new(HashMap::new()) }
    }

    pub fn get(&self, attrs: &PanelAttributes, image_size: u32) -> Arc<Vec<u8>> {
        let key = (image_size, *attrs);
        if let Some(hit) = self.map.lock().unwrap().get(&key) {
            return Arc::clone(hit);
        }
        let img = Arc::new(render_panel(attrs, image_size));
        let mut guard = self.map.lock().unwrap();
        Arc::clone(guard.entry(key).or_insert(img))
    }
}

impl Default for RenderCache {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::ShapeType;

    fn attrs(shape: ShapeType, size: u8, shade: u8, count: u8, rotation: u8) -> PanelAttributes {
        PanelAttributes { shape_type: shape, size, shade, count, rotation }
    }

    #[test]
    fn table_symmetries_hold() {
        for k in 0..120 {
            let deg = 3 * k as i64;
            assert_eq!(sin_deg(deg), -sin_deg(deg + 180), "deg {deg}");
            assert_eq!(sin_deg(deg), sin_deg(deg + 360), "deg {deg}");
        }
        assert_eq!(sin_deg(0), 0.0);
        assert_eq!(sin_deg(180), 0.0);
        assert_eq!(sin_deg(90), 1.0);
        assert_eq!(sin_deg(270), -1.0);
        assert_eq!(sin_deg(30), 0.5);
        assert_eq!(cos_deg(0), 1.0);
        assert_eq!(cos_deg(90), 0.0);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = attrs(ShapeType::Pentagon, 4, 3, 3, 5);
        assert_eq!(render_panel(&a, 32), render_panel(&a, 32));
        assert_eq!(render_panel(&a, 80), render_panel(&a, 80));
    }

    #[test]
    fn darkest_shade_reaches_black() {
        for shape in ShapeType::ALL {
            let img = render_panel(&attrs(shape, 5, 4, 1, 0), 32);
            assert!(img.contains(&0), "{shape:?} never hit gray level 0");
        }
    }

    #[test]
    fn background_stays_white() {
        let img = render_panel(&attrs(ShapeType::Circle, 1, 4, 1, 0), 32);
        // Corner pixel is far from the TL cell's small circle.
        assert_eq!(img[31], 255);
        assert_eq!(*img.last().unwrap(), 255);
        assert!(img.iter().any(|&v| v < 255));
    }

    #[test]
    fn count_fills_cells_in_order() {
        let one = render_panel(&attrs(ShapeType::Square, 3, 4, 1, 0), 32);
        let two = render_panel(&attrs(ShapeType::Square, 3, 4, 2, 0), 32);
        // The TL cell is identical; the TR cell darkens only for count = 2.
        let tl: Vec<u8> = (0..16).flat_map(|y| (0..16).map(move |x| y * 32 + x)).map(|i| one[i]).collect();
        let tl2: Vec<u8> = (0..16).flat_map(|y| (0..16).map(move |x| y * 32 + x)).map(|i| two[i]).collect();
        assert_eq!(tl, tl2);
        let tr_two_dark = (0..16).any(|y| (16..32).any(|x| two[y * 32 + x] < 255));
        let tr_one_dark = (0..16).any(|y| (16..32).any(|x| one[y * 32 + x] < 255));
        assert!(tr_two_dark && !tr_one_dark);
    }

    #[test]
    fn rotation_moves_polygon_pixels_but_not_circles() {
        let t0 = render_panel(&attrs(ShapeType::Triangle, 5, 4, 1, 0), 32);
        let t1 = render_panel(&attrs(ShapeType::Triangle, 5, 4, 1, 1), 32);
        assert_ne!(t0, t1);
        let c0 = render_panel(&attrs(ShapeType::Circle, 5, 4, 1, 0), 32);
        let c1 = render_panel(&attrs(ShapeType::Circle, 5, 4, 1, 3), 32);
        assert_eq!(c0, c1);
    }

    #[test]
    fn all_attribute_tuples_distinct_at_size_32() {
        use std::collections::HashSet;
        let mut seen: HashSet<Vec<u8>> = HashSet::new();
        for shape in ShapeType::ALL {
            for size in 1..=5 {
                for shade in 0..=4 {
                    for count in 1..=4 {
                        let img = render_panel(&attrs(shape, size, shade, count, 0), 32);
                        assert!(
                            seen.insert(img),
                            "collision at {shape:?} size={size} shade={shade} count={count}"
                        );
                    }
                }
            }
        }
        assert_eq!(seen.len(), 500);
    }

    #[test]
    fn cache_returns_identical_bytes() {
        let cache = RenderCache::new();
        let a = attrs(ShapeType::Hexagon, 2, 1, 4, 7);
        let first = cache.get(&a, 32);
        let second = cache.get(&a, 32);
        assert!(Arc::ptr_eq(&first, &second));
        assert_eq!(*first, render_panel(&a, 32));
    }
}

use serde::{Deserialize, Serialize};

use crate::geometry::{LocalFrame, Vec2};

/// Side length of the square local raster, in pixels.
pub const RASTER_SIZE: usize = 224;
pub const RASTER_CHANNELS: usize = 3;
/// Meters per pixel.
pub const RESOLUTION: f64 = 1.0;
/// 0-based pixel holding the anchor agent at the first observed frame
/// (row 122, column 51 counted from one).
pub const ANCHOR_PIXEL: (usize, usize) = (121, 50);

pub const CHANNEL_ROAD_DIVIDERS: usize = 0;
pub const CHANNEL_LANE_DIVIDERS: usize = 1;
pub const CHANNEL_AREAS: usize = 2;

const PLANE: usize = RASTER_SIZE * RASTER_SIZE;
const WORDS: usize = (RASTER_CHANNELS * PLANE).div_ceil(64);

/// Vector map geometry in world coordinates. Polygons are implicitly closed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorMap {
    #[serde(default)]
    pub drivable_areas: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub crosswalks: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub lane_dividers: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub road_dividers: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub lane_centerlines: Vec<Vec<Vec2>>,
}

impl VectorMap {
    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.iter().flatten().all(|p| p.is_finite()))
    }

    fn layers(&self) -> impl Iterator<Item = &Vec<Vec<Vec2>>> {
        [
            &self.drivable_areas,
            &self.crosswalks,
            &self.lane_dividers,
            &self.road_dividers,
            &self.lane_centerlines,
        ]
        .into_iter()
    }

    /// Applies `f` to every vertex.
    pub fn map_points(&self, f: impl Fn(Vec2) -> Vec2) -> VectorMap {
        let m = |layer: &Vec<Vec<Vec2>>| -> Vec<Vec<Vec2>> {
            layer
                .iter()
                .map(|shape| shape.iter().map(|&p| f(p)).collect())
                .collect()
        };
        VectorMap {
            drivable_areas: m(&self.drivable_areas),
            crosswalks: m(&self.crosswalks),
            lane_dividers: m(&self.lane_dividers),
            road_dividers: m(&self.road_dividers),
            lane_centerlines: m(&self.lane_centerlines),
        }
    }
}

/// Binary 3×224×224 semantic raster, bit-packed.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterMap {
    bits: Vec<u64>,
}

impl std::fmt::Debug for RasterMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let counts: Vec<usize> = (0..RASTER_CHANNELS).map(|c| self.count_ones(c)).collect();
        f.debug_struct("RasterMap").field("ones", &counts).finish()
    }
}

impl Default for RasterMap {
    fn default() -> Self {
        Self::empty()
    }
}

impl RasterMap {
    pub fn empty() -> Self {
        RasterMap {
            bits: vec![0; WORDS],
        }
    }

    pub fn filled() -> Self {
        let mut r = Self::empty();
        for c in 0..RASTER_CHANNELS {
            for row in 0..RASTER_SIZE {
                for col in 0..RASTER_SIZE {
                    r.set(c, row, col);
                }
            }
        }
        r
    }

    #[inline]
    fn index(c: usize, row: usize, col: usize) -> usize {
        c * PLANE + row * RASTER_SIZE + col
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> bool {
        let i = Self::index(c, row, col);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize) {
        let i = Self::index(c, row, col);
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn value(&self, c: usize, row: usize, col: usize) -> f64 {
        if self.get(c, row, col) {
            1.0
        } else {
            0.0
        }
    }

    pub fn count_ones(&self, c: usize) -> usize {
        (0..RASTER_SIZE)
            .flat_map(|r| (0..RASTER_SIZE).map(move |col| (r, col)))
            .filter(|&(r, col)| self.get(c, r, col))
            .count()
    }

    /// Dense `[channel][row][col]` values in {0, 1}.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; RASTER_CHANNELS * PLANE];
        for (i, v) in out.iter_mut().enumerate() {
            if self.bits[i / 64] >> (i % 64) & 1 == 1 {
                *v = 1.0;
            }
        }
        out
    }

    /// Block-averaged `[channel][row][col]` grid of side `RASTER_SIZE / factor`.
    pub fn pooled(&self, factor: usize) -> Vec<f64> {
        assert!(factor >= 1 && RASTER_SIZE % factor == 0);
        let side = RASTER_SIZE / factor;
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = vec![0.0; RASTER_CHANNELS * side * side];
        for c in 0..RASTER_CHANNELS {
            for row in 0..RASTER_SIZE {
                let base = c * PLANE + row * RASTER_SIZE;
                let orow = c * side * side + (row / factor) * side;
                for col in 0..RASTER_SIZE {
                    let i = base + col;
                    if self.bits[i / 64] >> (i % 64) & 1 == 1 {
                        out[orow + col / factor] += norm;
                    }
                }
            }
        }
        out
    }
}

/// Continuous pixel coordinates (col, row) of a local-frame point; pixel
/// centres sit on integers.
pub fn local_to_pixel(p: Vec2) -> (f64, f64) {
    (
        ANCHOR_PIXEL.1 as f64 + p.x / RESOLUTION,
        ANCHOR_PIXEL.0 as f64 - p.y / RESOLUTION,
    )
}

/// Local-frame point at the centre of pixel (row, col).
pub fn pixel_to_local(row: usize, col: usize) -> Vec2 {
    Vec2::new(
        (col as f64 - ANCHOR_PIXEL.1 as f64) * RESOLUTION,
        (ANCHOR_PIXEL.0 as f64 - row as f64) * RESOLUTION,
    )
}

/// Pixel containing a local-frame point, if inside the raster.
pub fn pixel_of(p: Vec2) -> Option<(usize, usize)> {
    let (col, row) = local_to_pixel(p);
    let (col, row) = ((col + 0.5).floor(), (row + 0.5).floor());
    let max = RASTER_SIZE as f64;
    (col >= 0.0 && row >= 0.0 && col < max && row < max).then_some((row as usize, col as usize))
}

pub fn rasterize(map: &VectorMap, frame: &LocalFrame) -> RasterMap {
    let mut raster = RasterMap::empty();
    let to_px = |shape: &Vec<Vec2>| -> Vec<(f64, f64)> {
        shape.iter().map(|&p| local_to_pixel(frame.to_local(p))).collect()
    };
    for poly in map.drivable_areas.iter().chain(&map.crosswalks) {
        fill_polygon(&mut raster, CHANNEL_AREAS, &to_px(poly));
    }
    for line in &map.road_dividers {
        draw_polyline(&mut raster, &[CHANNEL_ROAD_DIVIDERS], &to_px(line));
    }
    for line in &map.lane_dividers {
        draw_polyline(&mut raster, &[CHANNEL_LANE_DIVIDERS], &to_px(line));
    }
    for line in &map.lane_centerlines {
        draw_polyline(
            &mut raster,
            &[CHANNEL_ROAD_DIVIDERS, CHANNEL_LANE_DIVIDERS, CHANNEL_AREAS],
            &to_px(line),
        );
    }
    raster
}

/// Even-odd scanline fill sampled at pixel centres.
fn fill_polygon(raster: &mut RasterMap, channel: usize, pts: &[(f64, f64)]) {
    if pts.len() < 3 {
        return;
    }
    let (min_row, max_row) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let first = min_row.ceil().max(0.0) as i64;
    let last = max_row.floor().min(RASTER_SIZE as f64 - 1.0) as i64;
    let mut xs: Vec<f64> = Vec::new();
    for row in first..=last {
        let yc = row as f64;
        xs.clear();
        for i in 0..pts.len() {
            let a = pts[i];
            let b = pts[(i + 1) % pts.len()];
            if (a.1 <= yc && yc < b.1) || (b.1 <= yc && yc < a.1) {
                xs.push(a.0 + (yc - a.1) * (b.0 - a.0) / (b.1 - a.1));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let c0 = pair[0].ceil().max(0.0) as i64;
            let c1 = (pair[1].ceil() as i64).min(RASTER_SIZE as i64);
            for col in c0..c1 {
                raster.set(channel, row as usize, col as usize);
            }
        }
    }
}

/// One pixel per column (per row for steep segments): the pixel whose
/// centre is nearest the segment at that column centre. Every vertex pixel
/// is set as well, so joints stay connected. Each decision depends only on
/// the segment near that pixel, which keeps the result stable under tiny
/// perturbations of the input.
fn draw_polyline(raster: &mut RasterMap, channels: &[usize], pts: &[(f64, f64)]) {
    for &(x, y) in pts {
        plot(raster, channels, round(x), round(y));
    }
    for seg in pts.windows(2) {
        draw_segment(raster, channels, seg[0], seg[1]);
    }
}

fn round(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

fn plot(raster: &mut RasterMap, channels: &[usize], col: i64, row: i64) {
    let n = RASTER_SIZE as i64;
    if (0..n).contains(&col) && (0..n).contains(&row) {
        for &c in channels {
            raster.set(c, row as usize, col as usize);
        }
    }
}

fn draw_segment(raster: &mut RasterMap, channels: &[usize], a: (f64, f64), b: (f64, f64)) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let steep = dy.abs() > dx.abs();
    // walk the major axis u, solve for the minor axis v
    let (au, av, du, dv) = if steep { (a.1, a.0, dy, dx) } else { (a.0, a.1, dx, dy) };
    if du == 0.0 {
        return;
    }
    let max = RASTER_SIZE as f64 - 1.0;
    let first = au.min(au + du).ceil().max(0.0);
    let last = au.max(au + du).floor().min(max);
    if first > last {
        return;
    }
    for u in first as i64..=last as i64 {
        let v = round(av + (u as f64 - au) * dv / du);
        if steep {
            plot(raster, channels, v, u);
        } else {
            plot(raster, channels, u, v);
        }
    }
}

/// Intersection-over-union of the set pixels of two rasters (all channels).
pub fn raster_iou(a: &RasterMap, b: &RasterMap) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += (x & y).count_ones() as u64;
        union += (x | y).count_ones() as u64;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

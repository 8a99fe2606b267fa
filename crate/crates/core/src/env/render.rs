//! Two orthographic cameras and a small anti-aliased rasteriser.

use serde::{Deserialize, Serialize};

use super::kinematics::Point3;

/// Channel holding the cube.
pub const CUBE_CHANNEL: usize = 0;
/// Channel holding the arm links.
pub const LINK_CHANNEL: usize = 1;
/// Channel holding the end-effector marker.
pub const EFFECTOR_CHANNEL: usize = 2;
pub const CHANNELS: usize = 3;

/// Orthographic camera described by the world directions that map to the
/// image's rightward and upward axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub right: Point3,
    pub up: Point3,
}

impl Camera {
    /// In front of the robot, looking back along −x.
    pub const FRONT: Camera = Camera {
        right: [0.0, 1.0, 0.0],
        up: [0.0, 0.0, 1.0],
    };
    /// To the robot's side, looking along −y.
    pub const SIDE: Camera = Camera {
        right: [-1.0, 0.0, 0.0],
        up: [0.0, 0.0, 1.0],
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Height and width of each camera view in pixels.
    pub image_size: usize,
    /// Half-width of the square world window each camera sees.
    pub view_extent: f64,
    pub cube_size: f64,
    pub link_width: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            view_extent: 1.1,
            cube_size: 0.12,
            link_width: 0.05,
        }
    }
}

impl RenderConfig {
    fn pixels_per_unit(&self) -> f64 {
        self.image_size as f64 / (2.0 * self.view_extent)
    }

    /// Continuous pixel coordinates `(column, row)` of `p` in `camera`.
    /// Pixel `(i, j)` covers `[j, j+1) × [i, i+1)`.
    pub fn project(&self, camera: &Camera, p: Point3) -> (f64, f64) {
        let dot = |a: &Point3| a[0] * p[0] + a[1] * p[1] + a[2] * p[2];
        let s = self.pixels_per_unit();
        (
            (dot(&camera.right) + self.view_extent) * s,
            (self.view_extent - dot(&camera.up)) * s,
        )
    }
}

/// Observation image: `CHANNELS × size × 2·size`, front view left, side view right.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    size: usize,
    pixels: Vec<u8>,
}

impl Observation {
    pub fn from_pixels(size: usize, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == CHANNELS * size * 2 * size).then_some(Self { size, pixels })
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn height(&self) -> usize {
        self.size
    }

    /// Total width, both views.
    pub fn width(&self) -> usize {
        2 * self.size
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.pixels[(channel * self.size + row) * 2 * self.size + col]
    }

    /// Intensity in `[0, 1]`.
    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        f64::from(self.pixel(channel, row, col)) / 255.0
    }
}

struct Canvas {
    size: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; CHANNELS * size * size],
        }
    }

    fn blend(&mut self, channel: usize, row: usize, col: usize, coverage: f64) {
        let px = &mut self.data[(channel * self.size + row) * self.size + col];
        *px = px.max(coverage);
    }

    /// Axis-aligned square centred at `(cu, cv)`, coverage by exact area overlap.
    fn fill_square(&mut self, channel: usize, cu: f64, cv: f64, side: f64) {
        let (u0, u1, v0, v1) = (
            cu - side / 2.0,
            cu + side / 2.0,
            cv - side / 2.0,
            cv + side / 2.0,
        );
        let overlap =
            |lo: f64, hi: f64, k: usize| (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
        for (row, col) in self.cells_in(u0, u1, v0, v1) {
            let cov = overlap(u0, u1, col) * overlap(v0, v1, row);
            if cov > 0.0 {
                self.blend(channel, row, col, cov);
            }
        }
    }

    fn disc(&mut self, channel: usize, cu: f64, cv: f64, radius: f64) {
        let r = radius + 0.5;
        for (row, col) in self.cells_in(cu - r, cu + r, cv - r, cv + r) {
            let d = ((col as f64 + 0.5 - cu).powi(2) + (row as f64 + 0.5 - cv).powi(2)).sqrt();
            let cov = (radius + 0.5 - d).clamp(0.0, 1.0);
            if cov > 0.0 {
                self.blend(channel, row, col, cov);
            }
        }
    }

    fn segment(&mut self, channel: usize, a: (f64, f64), b: (f64, f64), half_width: f64) {
        let r = half_width + 0.5;
        let (u0, u1) = (a.0.min(b.0) - r, a.0.max(b.0) + r);
        let (v0, v1) = (a.1.min(b.1) - r, a.1.max(b.1) + r);
        let (du, dv) = (b.0 - a.0, b.1 - a.1);
        let len2 = du * du + dv * dv;
        for (row, col) in self.cells_in(u0, u1, v0, v1) {
            let (pu, pv) = (col as f64 + 0.5, row as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((pu - a.0) * du + (pv - a.1) * dv) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = ((pu - a.0 - t * du).powi(2) + (pv - a.1 - t * dv).powi(2)).sqrt();
            let cov = (half_width + 0.5 - d).clamp(0.0, 1.0);
            if cov > 0.0 {
                self.blend(channel, row, col, cov);
            }
        }
    }

    /// Pixel cells intersecting the box `[u0, u1] × [v0, v1]`, clipped to the canvas.
    fn cells_in(&self, u0: f64, u1: f64, v0: f64, v1: f64) -> Vec<(usize, usize)> {
        let n = self.size as f64;
        if u1 < 0.0 || v1 < 0.0 || u0 >= n || v0 >= n {
            return Vec::new();
        }
        let (c0, c1) = (
            u0.max(0.0).floor() as usize,
            (u1.min(n - 1.0)).floor() as usize,
        );
        let (r0, r1) = (
            v0.max(0.0).floor() as usize,
            (v1.min(n - 1.0)).floor() as usize,
        );
        (r0..=r1)
            .flat_map(|r| (c0..=c1).map(move |c| (r, c)))
            .collect()
    }
}

/// Renders one camera view of an arm `chain` (base first) and a cube.
fn render_view(config: &RenderConfig, camera: &Camera, chain: &[Point3], cube: Point3) -> Canvas {
    let mut canvas = Canvas::new(config.image_size);
    let s = config.pixels_per_unit();
    let (cu, cv) = config.project(camera, cube);
    canvas.fill_square(CUBE_CHANNEL, cu, cv, config.cube_size * s);
    let half_width = (config.link_width * s / 2.0).max(0.5);
    let projected: Vec<_> = chain.iter().map(|p| config.project(camera, *p)).collect();
    for pair in projected.windows(2) {
        canvas.segment(LINK_CHANNEL, pair[0], pair[1], half_width);
    }
    if let Some(tip) = projected.last() {
        canvas.disc(
            EFFECTOR_CHANNEL,
            tip.0,
            tip.1,
            (config.cube_size * s / 2.0).max(0.75),
        );
    }
    canvas
}

/// Renders both views and concatenates them horizontally (front left, side right).
pub fn render_scene(config: &RenderConfig, chain: &[Point3], cube: Point3) -> Observation {
    let n = config.image_size;
    let front = render_view(config, &Camera::FRONT, chain, cube);
    let side = render_view(config, &Camera::SIDE, chain, cube);
    let mut pixels = vec![0u8; CHANNELS * n * 2 * n];
    for c in 0..CHANNELS {
        for r in 0..n {
            let dst = &mut pixels[(c * n + r) * 2 * n..(c * n + r + 1) * 2 * n];
            let src = (c * n + r) * n;
            for (d, v) in dst[..n].iter_mut().zip(&front.data[src..src + n]) {
                *d = quantize(*v);
            }
            for (d, v) in dst[n..].iter_mut().zip(&side.data[src..src + n]) {
                *d = quantize(*v);
            }
        }
    }
    Observation { size: n, pixels }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Width-normalised pixel distance between two world points in `camera`.
pub fn view_distance(config: &RenderConfig, camera: &Camera, a: Point3, b: Point3) -> f64 {
    let (pa, pb) = (config.project(camera, a), config.project(camera, b));
    ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt() / config.image_size as f64
}

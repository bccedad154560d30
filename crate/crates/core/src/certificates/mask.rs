//! Binary masks, PGM I/O and convex silhouette rasterization.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::estimator::BoxState;
use crate::geometry::{PinholeCamera, Pose, Shape, StereoRig};
use crate::View;

/// Row-major binary image, bit-packed.
#[derive(Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        BitMask {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::invalid(
                "mask",
                format!("{} bits for a {width}x{height} mask", bits.len()),
            ));
        }
        let mut m = BitMask::new(width, height);
        for (i, b) in bits.into_iter().enumerate() {
            if b {
                m.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(m)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = BitMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn index(&self, x: u32, y: u32) -> usize {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x}, {y}) out of range"
        );
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Pixels in row-major order.
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        let n = self.width as usize * self.height as usize;
        (0..n).map(move |i| self.words[i / 64] >> (i % 64) & 1 == 1)
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Writes an 8-bit binary PGM (P5); foreground as 255.
    pub fn write_pgm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.bits().map(|b| if b { 255 } else { 0 }).collect();
        w.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_pgm(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads an 8-bit binary PGM (P5). Values `>= 128` are foreground.
    pub fn read_pgm(r: impl Read) -> std::result::Result<Self, String> {
        let mut r = std::io::BufReader::new(r);
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            let mut token = Vec::new();
            loop {
                let buf = r.fill_buf().map_err(|e| e.to_string())?;
                let Some(&c) = buf.first() else {
                    return Err("truncated PGM header".into());
                };
                r.consume(1);
                if c == b'#' && token.is_empty() {
                    let mut skip = Vec::new();
                    r.read_until(b'\n', &mut skip).map_err(|e| e.to_string())?;
                    continue;
                }
                if c.is_ascii_whitespace() {
                    if token.is_empty() {
                        continue;
                    }
                    break;
                }
                token.push(c);
            }
            fields.push(String::from_utf8_lossy(&token).into_owned());
        }
        if fields[0] != "P5" {
            return Err(format!("expected P5 magic, found {:?}", fields[0]));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| format!("invalid {what} {s:?}"))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(format!("unsupported maxval {maxval}, expected 8-bit"));
        }
        let mut data = vec![0u8; width as usize * height as usize];
        r.read_exact(&mut data)
            .map_err(|_| "truncated PGM pixel data".to_string())?;
        let bits = data.into_iter().map(|v| v >= 128).collect();
        BitMask::from_bits(width, height, bits).map_err(|e| e.to_string())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        BitMask::read_pgm(file).map_err(|message| Error::Parse {
            file: path.to_path_buf(),
            path: "pgm".into(),
            message,
        })
    }
}

/// Masks for both views of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewMasks {
    pub left: BitMask,
    pub right: BitMask,
}

impl ViewMasks {
    pub fn get(&self, view: View) -> &BitMask {
        match view {
            View::Left => &self.left,
            View::Right => &self.right,
        }
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by monotone chain, with positive-cross orientation and
/// collinear points dropped.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Fills pixels whose centers lie inside or on the convex polygon `hull`.
pub fn rasterize_convex(hull: &[Vector2<f64>], width: u32, height: u32) -> BitMask {
    let mut mask = BitMask::new(width, height);
    if hull.len() < 3 {
        return mask;
    }
    let (ymin, ymax) = hull
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.y), hi.max(p.y))
        });
    let row_lo = ymin.ceil().max(0.0);
    let row_hi = ymax.floor().min(height as f64 - 1.0);
    if row_lo > row_hi {
        return mask;
    }
    for row in row_lo as u32..=row_hi as u32 {
        let y = row as f64;
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        for k in 0..hull.len() {
            let a = hull[k];
            let b = hull[(k + 1) % hull.len()];
            if (a.y - y) * (b.y - y) > 0.0 {
                continue;
            }
            if a.y == b.y {
                xmin = xmin.min(a.x.min(b.x));
                xmax = xmax.max(a.x.max(b.x));
            } else {
                let x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
                xmin = xmin.min(x);
                xmax = xmax.max(x);
            }
        }
        if xmin > xmax {
            continue;
        }
        let lo = xmin.ceil().max(0.0);
        let hi = xmax.floor().min(width as f64 - 1.0);
        if lo > hi {
            continue;
        }
        for col in lo as u32..=hi as u32 {
            mask.set(col, row, true);
        }
    }
    mask
}

/// Silhouette of a cuboid: the convex hull of its eight projected corners,
/// rasterized at the camera resolution. `pose` maps object to camera.
pub fn silhouette_mask(camera: &PinholeCamera, pose: &Pose, shape: &Shape) -> Result<BitMask> {
    let corners = crate::geometry::canonical_cube_corners().corners;
    let mut pts = Vec::with_capacity(8);
    for (i, u) in corners.iter().enumerate() {
        let p = crate::geometry::transform_corner(pose, shape, u);
        pts.push(camera.project(&p).map_err(|e| match e {
            Error::PointBehindCamera { depth, .. } => Error::PointBehindCamera {
                depth,
                view: None,
                corner: Some(i),
            },
            other => other,
        })?);
    }
    let mask = rasterize_convex(&convex_hull(&pts), camera.width, camera.height);
    if mask.is_empty() {
        log::warn!("silhouette covers no pixel centers");
    }
    Ok(mask)
}

/// Silhouettes of `state` in both views of `rig`.
pub fn render_silhouettes(state: &BoxState, rig: &StereoRig) -> Result<ViewMasks> {
    let mut out = [BitMask::new(0, 0), BitMask::new(0, 0)];
    for (slot, view) in out.iter_mut().zip(View::BOTH) {
        let pose = rig.view_pose(view, &state.pose);
        *slot = silhouette_mask(rig.camera(view), &pose, &state.shape).map_err(|e| match e {
            Error::PointBehindCamera { depth, corner, .. } => Error::PointBehindCamera {
                depth,
                view: Some(view),
                corner,
            },
            other => other,
        })?;
    }
    let [left, right] = out;
    Ok(ViewMasks { left, right })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(0.5, 0.5),
            Vector2::new(0.5, 0.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
    }

    #[test]
    fn rasterize_inclusive_boundary() {
        // Square whose edges pass exactly through pixel centers 2 and 5.
        let hull = convex_hull(&[
            Vector2::new(2.0, 2.0),
            Vector2::new(5.0, 2.0),
            Vector2::new(5.0, 5.0),
            Vector2::new(2.0, 5.0),
        ]);
        let m = rasterize_convex(&hull, 8, 8);
        assert_eq!(m.area(), 16);
        assert!(m.get(2, 2) && m.get(5, 5) && !m.get(6, 5) && !m.get(1, 2));
    }

    #[test]
    fn rasterize_clips_to_image() {
        let hull = convex_hull(&[
            Vector2::new(-10.0, -10.0),
            Vector2::new(100.0, -10.0),
            Vector2::new(100.0, 100.0),
            Vector2::new(-10.0, 100.0),
        ]);
        assert_eq!(rasterize_convex(&hull, 7, 5).area(), 35);
    }

    #[test]
    fn pgm_round_trip_and_threshold() {
        let m = BitMask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        let mut buf = Vec::new();
        m.write_pgm(&mut buf).unwrap();
        assert_eq!(BitMask::read_pgm(&buf[..]).unwrap(), m);

        let mut raw = b"P5\n# comment\n3 1\n255\n".to_vec();
        raw.extend_from_slice(&[127, 128, 255]);
        let m = BitMask::read_pgm(&raw[..]).unwrap();
        assert_eq!(m.bits().collect::<Vec<_>>(), vec![false, true, true]);

        assert!(BitMask::read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(BitMask::read_pgm(&b"P5\n4 4\n255\n\0"[..]).is_err());
    }
}

//! Polar-walk ("knight") image encoding of protein sequences.
//!
//! Each residue owns a vertex of a regular icosagon: residue index `i` maps to
//! the angle `18° * i`. Starting from the image centre, every residue moves the
//! pen `r` pixels in its direction (`x += r cos θ`, `y -= r sin θ`, so positive
//! angles walk up-screen on a y-down raster) and stamps a filled disk in the
//! residue's colour. A coordinate that left `[0, M]` is snapped back to `M/2`
//! at the top of the next step.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::seq::{residue_index, ProteinSequence, ALPHABET};

pub type Rgb = [u8; 3];

/// Residue colours, in [`ALPHABET`] order.
pub const STANDARD_COLORS: [Rgb; 20] = [
    [255, 0, 0],     // A
    [255, 255, 0],   // C
    [0, 234, 255],   // D
    [170, 0, 255],   // E
    [255, 127, 0],   // F
    [191, 255, 0],   // G
    [0, 149, 255],   // H
    [255, 0, 170],   // I
    [237, 185, 185], // K
    [185, 215, 237], // L
    [231, 233, 185], // M
    [220, 185, 237], // N
    [185, 237, 224], // P
    [143, 35, 35],   // Q
    [35, 98, 143],   // R
    [143, 106, 35],  // S
    [107, 35, 143],  // T
    [115, 237, 155], // V
    [204, 204, 204], // W
    [0, 64, 255],    // Y
];

pub const ANGLE_STEP_DEGREES: f64 = 18.0;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("residue '{0}' is not one of the 20 standard amino acids")]
    UnknownResidue(char),
    #[error("invalid encoding config: {0}")]
    InvalidConfig(String),
    #[error("PNG encoding failed: {0}")]
    Png(String),
    #[error("unsupported image: {0}")]
    UnsupportedImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleColorEntry {
    pub degrees: f64,
    pub radians: f64,
    pub color: Rgb,
}

/// Per-residue walk angle and stamp colour.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleColorTable {
    entries: [AngleColorEntry; 20],
}

impl Default for AngleColorTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl AngleColorTable {
    pub fn standard() -> Self {
        Self::with_colors(STANDARD_COLORS)
    }

    /// Same angles as the standard table, custom colours (in alphabet order).
    pub fn with_colors(colors: [Rgb; 20]) -> Self {
        let entries = std::array::from_fn(|i| {
            let degrees = i as f64 * ANGLE_STEP_DEGREES;
            AngleColorEntry {
                degrees,
                radians: degrees.to_radians(),
                color: colors[i],
            }
        });
        AngleColorTable { entries }
    }

    pub fn entry(&self, residue: u8) -> Result<&AngleColorEntry, EncodeError> {
        residue_index(residue)
            .map(|i| &self.entries[i])
            .ok_or(EncodeError::UnknownResidue(residue as char))
    }

    pub fn angle_degrees(&self, residue: u8) -> Result<f64, EncodeError> {
        self.entry(residue).map(|e| e.degrees)
    }

    pub fn color(&self, residue: u8) -> Result<Rgb, EncodeError> {
        self.entry(residue).map(|e| e.color)
    }

    pub fn palette(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.entries.iter().map(|e| e.color)
    }

    pub fn residues() -> &'static [u8; 20] {
        &ALPHABET
    }
}

/// Image geometry for the walk.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingConfig {
    /// Side length `M` of the square image, in pixels.
    pub size: u32,
    /// Walk step length `r`, in pixels.
    pub radius: f64,
    /// Radius of each stamped disk, in pixels.
    pub point_size: u32,
    pub background: Rgb,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            size: 512,
            radius: 15.0,
            point_size: 2,
            background: [0, 0, 0],
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(EncodeError::InvalidConfig(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.point_size < 1 {
            return Err(EncodeError::InvalidConfig(
                "point size must be at least 1".into(),
            ));
        }
        let min = 2.0 * self.radius + 2.0 * f64::from(self.point_size);
        if f64::from(self.size) < min {
            return Err(EncodeError::InvalidConfig(format!(
                "image size {} is smaller than 2*radius + 2*point_size = {min}",
                self.size
            )));
        }
        Ok(())
    }
}

/// `(r cos θ, r sin θ)` for a residue.
pub fn displacement(
    residue: u8,
    table: &AngleColorTable,
    radius: f64,
) -> Result<(f64, f64), EncodeError> {
    let theta = table.entry(residue)?.radians;
    Ok((radius * theta.cos(), radius * theta.sin()))
}

/// One step of the walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkStep {
    pub residue: u8,
    /// Whether the loop-top guard snapped x (resp. y) back to the centre.
    pub reset_x: bool,
    pub reset_y: bool,
    /// Unrounded position after this residue's displacement.
    pub x: f64,
    pub y: f64,
    /// Rounded disk centre, or `None` when it falls outside the raster.
    pub center: Option<(u32, u32)>,
}

/// Traces the walk without rasterizing.
pub fn walk(
    residues: &[u8],
    cfg: &EncodingConfig,
    table: &AngleColorTable,
) -> Result<Vec<WalkStep>, EncodeError> {
    let m = f64::from(cfg.size);
    let half = m / 2.0;
    let (mut x, mut y) = (half, half);
    let mut steps = Vec::with_capacity(residues.len());
    for &residue in residues {
        let reset_x = x < 0.0 || x > m;
        if reset_x {
            x = half;
        }
        let reset_y = y < 0.0 || y > m;
        if reset_y {
            y = half;
        }
        let (dx, dy) = displacement(residue, table, cfg.radius)?;
        x += dx;
        y -= dy;
        steps.push(WalkStep {
            residue,
            reset_x,
            reset_y,
            x,
            y,
            center: raster_center(x, y, cfg.size),
        });
    }
    Ok(steps)
}

fn raster_center(x: f64, y: f64, size: u32) -> Option<(u32, u32)> {
    // f64::round rounds half away from zero
    let (cx, cy) = (x.round(), y.round());
    let limit = f64::from(size);
    (cx >= 0.0 && cx < limit && cy >= 0.0 && cy < limit).then_some((cx as u32, cy as u32))
}

/// Offsets `(dx, dy)` with `dx² + dy² <= radius²`, row-major.
pub fn disk_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = i64::from(radius);
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

/// An 8-bit RGB raster, row-major, no alpha.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl EncodedImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&color);
        }
        EncodedImage {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, EncodeError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(EncodeError::UnsupportedImage(format!(
                "buffer of {} bytes does not match {width}x{height} RGB",
                pixels.len()
            )));
        }
        Ok(EncodedImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, color: Rgb) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    /// Paints a filled disk, clipping pixels that fall outside the raster.
    fn stamp(&mut self, cx: u32, cy: u32, offsets: &[(i64, i64)], color: Rgb) {
        let (w, h) = (i64::from(self.width), i64::from(self.height));
        for &(dx, dy) in offsets {
            let (px, py) = (i64::from(cx) + dx, i64::from(cy) + dy);
            if (0..w).contains(&px) && (0..h).contains(&py) {
                self.set_pixel(px as u32, py as u32, color);
            }
        }
    }

    pub fn write_png<W: Write>(&self, out: W) -> Result<(), EncodeError> {
        let mut encoder = png::Encoder::new(out, self.width, self.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        let mut writer = encoder
            .write_header()
            .map_err(|e| EncodeError::Png(e.to_string()))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| EncodeError::Png(e.to_string()))?;
        writer.finish().map_err(|e| EncodeError::Png(e.to_string()))
    }

    pub fn to_png(&self) -> Result<Vec<u8>, EncodeError> {
        let mut buf = Vec::new();
        self.write_png(&mut buf)?;
        Ok(buf)
    }

    /// Decodes an 8-bit RGB or RGBA PNG; alpha is dropped.
    pub fn from_png(bytes: &[u8]) -> Result<Self, EncodeError> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| EncodeError::UnsupportedImage(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| EncodeError::UnsupportedImage("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| EncodeError::UnsupportedImage(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(EncodeError::UnsupportedImage(format!(
                "bit depth {:?}",
                info.bit_depth
            )));
        }
        buf.truncate(info.buffer_size());
        let pixels = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            other => {
                return Err(EncodeError::UnsupportedImage(format!(
                    "color type {other:?}"
                )))
            }
        };
        EncodedImage::from_raw(info.width, info.height, pixels)
    }

    pub fn load_png(path: &Path) -> Result<Self, EncodeError> {
        let bytes = std::fs::read(path)
            .map_err(|e| EncodeError::UnsupportedImage(format!("{}: {e}", path.display())))?;
        Self::from_png(&bytes)
    }
}

/// Renders one sequence and returns the walk trace alongside the image.
pub fn encode_traced(
    seq: &ProteinSequence,
    cfg: &EncodingConfig,
    table: &AngleColorTable,
) -> Result<(EncodedImage, Vec<WalkStep>), EncodeError> {
    cfg.validate()?;
    let steps = walk(seq.residues(), cfg, table)?;
    let offsets = disk_offsets(cfg.point_size);
    let mut image = EncodedImage::filled(cfg.size, cfg.size, cfg.background);
    for step in &steps {
        if let Some((cx, cy)) = step.center {
            image.stamp(cx, cy, &offsets, table.color(step.residue)?);
        }
    }
    Ok((image, steps))
}

pub fn encode(
    seq: &ProteinSequence,
    cfg: &EncodingConfig,
    table: &AngleColorTable,
) -> Result<EncodedImage, EncodeError> {
    encode_traced(seq, cfg, table).map(|(image, _)| image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> ProteinSequence {
        ProteinSequence::new("t", s).unwrap()
    }

    #[test]
    fn table_angles_and_colors() {
        let t = AngleColorTable::standard();
        assert_eq!(t.angle_degrees(b'A').unwrap(), 0.0);
        assert_eq!(t.angle_degrees(b'C').unwrap(), 18.0);
        assert_eq!(t.angle_degrees(b'G').unwrap(), 90.0);
        assert_eq!(t.angle_degrees(b'Y').unwrap(), 342.0);
        assert_eq!(t.color(b'A').unwrap(), [255, 0, 0]);
        assert_eq!(t.color(b'W').unwrap(), [204, 204, 204]);
        assert_eq!(t.color(b'Q').unwrap(), [143, 35, 35]);
        let mut angles: Vec<u64> = ALPHABET
            .iter()
            .map(|&r| t.angle_degrees(r).unwrap() as u64)
            .collect();
        angles.dedup();
        assert_eq!(angles.len(), 20);
        assert_eq!(t.entry(b'B'), Err(EncodeError::UnknownResidue('B')));
    }

    #[test]
    fn displacement_examples() {
        let t = AngleColorTable::standard();
        assert_eq!(displacement(b'A', &t, 15.0).unwrap(), (15.0, 0.0));
        let (gx, gy) = displacement(b'G', &t, 15.0).unwrap();
        assert!(gx.abs() < 1e-9 && (gy - 15.0).abs() < 1e-9);
        // 15*cos(18°), 15*sin(18°) from a 30-digit evaluation
        let (cx, cy) = displacement(b'C', &t, 15.0).unwrap();
        assert!((cx - 14.265847744427303).abs() < 1e-12);
        assert!((cy - 4.635254915624211).abs() < 1e-12);
        assert!(displacement(b'Z', &t, 15.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncodingConfig::default().validate().is_ok());
        let small = EncodingConfig {
            size: 33,
            ..Default::default()
        };
        assert!(small.validate().is_err());
        let exact = EncodingConfig {
            size: 34,
            ..Default::default()
        };
        assert!(exact.validate().is_ok());
        assert!(EncodingConfig {
            radius: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EncodingConfig {
            point_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn disk_footprint() {
        let d = disk_offsets(2);
        assert_eq!(d.len(), 13);
        assert!(d.contains(&(2, 0)) && d.contains(&(0, -2)) && !d.contains(&(2, 1)));
        assert_eq!(disk_offsets(1).len(), 5);
    }

    #[test]
    fn single_alanine() {
        let (img, steps) = encode_traced(
            &seq("A"),
            &EncodingConfig::default(),
            &AngleColorTable::standard(),
        )
        .unwrap();
        assert_eq!(steps[0].center, Some((271, 256)));
        assert_eq!(img.pixel(271, 256), [255, 0, 0]);
        assert_eq!(img.pixel(273, 256), [255, 0, 0]);
        assert_eq!(img.pixel(274, 256), [0, 0, 0]);
        assert_eq!(img.pixel(256, 256), [0, 0, 0]);
        let painted = img.pixels().chunks(3).filter(|p| *p != [0, 0, 0]).count();
        assert_eq!(painted, 13);
    }

    #[test]
    fn alanine_cysteine() {
        let (img, steps) = encode_traced(
            &seq("AC"),
            &EncodingConfig::default(),
            &AngleColorTable::standard(),
        )
        .unwrap();
        assert_eq!(steps[0].center, Some((271, 256)));
        assert_eq!(steps[1].center, Some((285, 251)));
        assert_eq!(img.pixel(285, 251), [255, 255, 0]);
    }

    #[test]
    fn alanine_run_resets_after_leaving_raster() {
        let cfg = EncodingConfig::default();
        let steps = walk(&[b'A'; 20], &cfg, &AngleColorTable::standard()).unwrap();
        for (k, s) in steps.iter().take(17).enumerate() {
            assert_eq!(s.x, 256.0 + 15.0 * (k as f64 + 1.0));
            assert_eq!(s.center, Some((271 + 15 * k as u32, 256)));
            assert!(!s.reset_x);
        }
        // step 18: guard sees 511 <= 512, walk moves to 526 and the stamp is dropped
        assert!(!steps[17].reset_x);
        assert_eq!(steps[17].x, 526.0);
        assert_eq!(steps[17].center, None);
        // step 19: guard fires
        assert!(steps[18].reset_x);
        assert_eq!(steps[18].x, 271.0);
        assert_eq!(steps[18].center, Some((271, 256)));
    }

    #[test]
    fn center_exactly_on_far_edge_is_dropped() {
        // x lands on M exactly: inside the walk bounds, outside the raster
        let cfg = EncodingConfig {
            size: 64,
            radius: 16.0,
            point_size: 1,
            background: [0; 3],
        };
        let steps = walk(b"AAA", &cfg, &AngleColorTable::standard()).unwrap();
        assert_eq!(steps[0].x, 48.0);
        assert_eq!(steps[1].x, 64.0);
        assert_eq!(steps[1].center, None);
        assert!(!steps[2].reset_x);
        assert_eq!(steps[2].x, 80.0);
    }

    #[test]
    fn png_round_trip() {
        let img = encode(
            &seq("MKVLAGHW"),
            &EncodingConfig {
                size: 64,
                ..Default::default()
            },
            &AngleColorTable::standard(),
        )
        .unwrap();
        let bytes = img.to_png().unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
        assert_eq!(EncodedImage::from_png(&bytes).unwrap(), img);
    }

    fn residues() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(ALPHABET.to_vec()), 1..400)
            .prop_map(|v| String::from_utf8(v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn palette_closure(s in residues()) {
            let t = AngleColorTable::standard();
            let cfg = EncodingConfig { size: 128, ..Default::default() };
            let img = encode(&seq(&s), &cfg, &t).unwrap();
            let used: Vec<Rgb> = s.bytes().map(|r| t.color(r).unwrap()).collect();
            for p in img.pixels().chunks(3) {
                let p = [p[0], p[1], p[2]];
                prop_assert!(p == cfg.background || used.contains(&p));
            }
        }

        #[test]
        fn recoloring_keeps_geometry(s in residues()) {
            let cfg = EncodingConfig::default();
            let mut colors = STANDARD_COLORS;
            colors.reverse();
            let a = walk(s.as_bytes(), &cfg, &AngleColorTable::standard()).unwrap();
            let b = walk(s.as_bytes(), &cfg, &AngleColorTable::with_colors(colors)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn steps_between_resets_are_radius_apart(s in residues(), size in 40u32..600) {
            let cfg = EncodingConfig { size, ..Default::default() };
            let steps = walk(s.as_bytes(), &cfg, &AngleColorTable::standard()).unwrap();
            for pair in steps.windows(2) {
                let (prev, next) = (pair[0], pair[1]);
                if next.reset_x || next.reset_y {
                    continue;
                }
                let d = (next.x - prev.x).hypot(next.y - prev.y);
                prop_assert!((d - cfg.radius).abs() < 1e-9);
            }
            // after the guard every step starts inside [0, M]
            let m = f64::from(size);
            let mut pos = (m / 2.0, m / 2.0);
            for st in &steps {
                let start_x = if st.reset_x { m / 2.0 } else { pos.0 };
                let start_y = if st.reset_y { m / 2.0 } else { pos.1 };
                prop_assert!((0.0..=m).contains(&start_x) && (0.0..=m).contains(&start_y));
                pos = (st.x, st.y);
            }
        }

        #[test]
        fn stamp_count_bounded(s in residues()) {
            let cfg = EncodingConfig { size: 64, ..Default::default() };
            let steps = walk(s.as_bytes(), &cfg, &AngleColorTable::standard()).unwrap();
            let stamped = steps.iter().filter(|st| st.center.is_some()).count();
            prop_assert!(stamped <= s.len());
        }
    }
}

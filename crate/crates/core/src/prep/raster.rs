//! Grayscale rasters, PGM codecs, binarization and Zhang-Suen thinning.

use crate::error::{Error, Result};
use crate::geom::Point;

/// 8-bit grayscale image, row-major with row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Parses binary (`P5`) or ASCII (`P2`) PGM. Samples wider than 8 bits are
    /// rescaled to `0..=255`.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut cur = PgmCursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let binary = match magic.as_slice() {
            b"P5" => true,
            b"P2" => false,
            other => {
                return Err(Error::UnsupportedFormat(format!(
                    "expected PGM magic P5 or P2, found {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if width == 0 || height == 0 {
            return Err(Error::Malformed("PGM dimensions must be positive".into()));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Malformed(format!("PGM maxval {maxval} out of range")));
        }
        let count = width
            .checked_mul(height)
            .ok_or_else(|| Error::Malformed("PGM dimensions overflow".into()))?;
        let mut samples = Vec::with_capacity(count);
        if binary {
            // Exactly one whitespace byte separates maxval from the raster.
            match cur.bytes.get(cur.pos) {
                Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
                _ => return Err(Error::Malformed("missing whitespace before PGM raster".into())),
            }
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            let raster = cur
                .bytes
                .get(cur.pos..cur.pos + need)
                .ok_or_else(|| Error::Malformed("PGM raster is truncated".into()))?;
            if wide {
                samples.extend(raster.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize));
            } else {
                samples.extend(raster.iter().map(|&b| b as usize));
            }
        } else {
            for _ in 0..count {
                samples.push(cur.number()?);
            }
        }
        let mut pixels = Vec::with_capacity(count);
        for s in samples {
            if s > maxval {
                return Err(Error::Malformed(format!("PGM sample {s} exceeds maxval {maxval}")));
            }
            pixels.push(if maxval == 255 {
                s as u8
            } else {
                ((s * 255 + maxval / 2) / maxval) as u8
            });
        }
        RasterImage::new(width, height, pixels)
    }

    /// Binary PGM with maxval 255.
    pub fn to_pgm_p5(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// ASCII PGM with maxval 255, one image row per line.
    pub fn to_pgm_p2(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<Vec<u8>> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Malformed("unexpected end of PGM header".into()));
        }
        Ok(self.bytes[start..self.pos].to_vec())
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(&tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::Malformed(format!(
                    "expected a decimal number in PGM, found {:?}",
                    String::from_utf8_lossy(&tok)
                ))
            })
    }
}

/// Which tone is ink.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InkPolarity {
    /// Dark strokes on a light background; ink value is `255 − pixel`.
    #[default]
    DarkOnLight,
    /// Light strokes on a dark background; ink value is the pixel.
    LightOnDark,
}

/// Boolean mask, row-major with row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Builds a mask from rows of `'1'` / `'0'` (or `'#'` / `'.'`).
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut mask = BinaryMask::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                mask.set(x, y, c == '1' || c == '#');
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds reads are background.
    fn get_signed(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            false
        } else {
            self.get(x as usize, y as usize)
        }
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|y| {
                (0..self.width)
                    .map(|x| if self.get(x, y) { '1' } else { '0' })
                    .collect()
            })
            .collect()
    }
}

/// Pixels whose ink value is at least `thresh`.
pub fn binarize(img: &RasterImage, thresh: u8, polarity: InkPolarity) -> BinaryMask {
    let mut mask = BinaryMask::new(img.width, img.height);
    for (bit, &px) in mask.bits.iter_mut().zip(&img.pixels) {
        let ink = match polarity {
            InkPolarity::DarkOnLight => 255 - px,
            InkPolarity::LightOnDark => px,
        };
        *bit = ink >= thresh;
    }
    mask
}

/// Neighbors `P2..P9` clockwise starting north, image rows growing down.
fn neighborhood(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let (x, y) = (x as isize, y as isize);
    [
        mask.get_signed(x, y - 1),
        mask.get_signed(x + 1, y - 1),
        mask.get_signed(x + 1, y),
        mask.get_signed(x + 1, y + 1),
        mask.get_signed(x, y + 1),
        mask.get_signed(x - 1, y + 1),
        mask.get_signed(x - 1, y),
        mask.get_signed(x - 1, y - 1),
    ]
}

/// Zhang-Suen thinning in place, iterated to a fixpoint.
pub fn zhang_suen(mask: &mut BinaryMask) {
    loop {
        let mut changed = false;
        for step in 0..2 {
            let doomed: Vec<(usize, usize)> = mask
                .iter_set()
                .filter(|&(x, y)| {
                    let n = neighborhood(mask, x, y);
                    let count = n.iter().filter(|&&b| b).count();
                    if !(2..=6).contains(&count) {
                        return false;
                    }
                    let transitions = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                    if transitions != 1 {
                        return false;
                    }
                    // n[0]=P2 n[2]=P4 n[4]=P6 n[6]=P8
                    if step == 0 {
                        !(n[0] && n[2] && n[4]) && !(n[2] && n[4] && n[6])
                    } else {
                        !(n[0] && n[2] && n[6]) && !(n[0] && n[4] && n[6])
                    }
                })
                .collect();
            changed |= !doomed.is_empty();
            for (x, y) in doomed {
                mask.set(x, y, false);
            }
        }
        if !changed {
            break;
        }
    }
}

/// Binarizes, thins and returns skeleton pixel centers with the y axis
/// pointing up: pixel `(x, y)` maps to `(x + 0.5, height − y − 0.5)`.
pub fn binarize_thin(img: &RasterImage, thresh: u8, polarity: InkPolarity) -> Vec<Point> {
    let mut mask = binarize(img, thresh, polarity);
    zhang_suen(&mut mask);
    mask_points(&mask)
}

pub(crate) fn mask_points(mask: &BinaryMask) -> Vec<Point> {
    let h = mask.height() as f64;
    mask.iter_set()
        .map(|(x, y)| Point::new(x as f64 + 0.5, h - y as f64 - 0.5))
        .collect()
}

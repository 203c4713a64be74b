//! Portable graymap reader (plain `P2` and raw `P5`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::perceptron::{G_OFFSET, G_SPAN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples in `0..=maxval`.
    pub pixels: Vec<u16>,
}

impl Graymap {
    /// Map every pixel onto `10 uS + 90 uS * p / maxval`.
    pub fn to_conductances(&self) -> Vec<f64> {
        let m = f64::from(self.maxval);
        self.pixels.iter().map(|&p| G_OFFSET + G_SPAN * f64::from(p) / m).collect()
    }

    /// Binary `P5` encoding of the map.
    pub fn to_p5(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        for &p in &self.pixels {
            if self.maxval < 256 {
                out.push(p as u8);
            } else {
                out.extend_from_slice(&p.to_be_bytes());
            }
        }
        out
    }
}

/// Read a graymap and convert it to tuning targets, requiring `rows x cols`.
pub fn load_pattern(path: &Path, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let map = read_pgm(path)?;
    if map.height != rows || map.width != cols {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 3,
            message: format!("image is {}x{}, the run needs {rows}x{cols}", map.height, map.width),
        });
    }
    Ok(map.to_conductances())
}

pub fn read_pgm(path: &Path) -> Result<Graymap> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes).map_err(|(offset, message)| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    })
}

type ParseResult<T> = std::result::Result<T, (usize, String)>;

struct Scanner<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Scanner<'_> {
    /// Skip whitespace and `#` comments that run to end of line.
    fn skip_blank(&mut self) {
        while let Some(&c) = self.b.get(self.pos) {
            if c == b'#' {
                while self.b.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> ParseResult<u32> {
        self.skip_blank();
        let start = self.pos;
        while self.b.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.b[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| (start, format!("{what} out of range")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> ParseResult<Graymap> {
    let plain = match bytes.get(..2) {
        Some(b"P2") => true,
        Some(b"P5") => false,
        _ => return Err((0, "not a graymap (expected P2 or P5)".into())),
    };
    let mut s = Scanner { b: bytes, pos: 2 };
    let width = s.number("width")? as usize;
    let height = s.number("height")? as usize;
    let maxval_at = s.pos;
    let maxval = s.number("maxval")?;
    if width == 0 || height == 0 {
        return Err((3, "width and height must be positive".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err((maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let maxval = maxval as u16;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| (3, "image dimensions overflow".to_string()))?;
    let mut pixels = Vec::with_capacity(n);
    if plain {
        for _ in 0..n {
            let at = s.pos;
            let v = s.number("pixel value")?;
            if v > u32::from(maxval) {
                return Err((at, format!("pixel {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as u16);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(s.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err((s.pos, "missing separator before raster".into()));
        }
        let start = s.pos + 1;
        let bpp = if maxval > 255 { 2 } else { 1 };
        let raster = bytes
            .get(start..start + n * bpp)
            .ok_or_else(|| (bytes.len(), format!("raster truncated: {} bytes expected", n * bpp)))?;
        for k in 0..n {
            let px = match bpp {
                2 => u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]),
                _ => u16::from(raster[k]),
            };
            if px > maxval {
                return Err((start + k * bpp, format!("pixel {px} exceeds maxval {maxval}")));
            }
            pixels.push(px);
        }
    }
    Ok(Graymap {
        width,
        height,
        maxval,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_with_comments() {
        let g = parse_pgm(b"P2\n# a comment\n3 2 # inline\n4\n0 1 2\n3 4 4\n").unwrap();
        assert_eq!((g.width, g.height, g.maxval), (3, 2, 4));
        assert_eq!(g.pixels, vec![0, 1, 2, 3, 4, 4]);
        let t = g.to_conductances();
        assert_eq!(t[0], 10e-6);
        assert!((t[5] - 100e-6).abs() < 1e-18);
        assert!((t[2] - 55e-6).abs() < 1e-18);
    }

    #[test]
    fn raw_round_trip_both_widths() {
        for maxval in [255u16, 1000] {
            let g = Graymap {
                width: 4,
                height: 3,
                maxval,
                pixels: (0..12).map(|k| k * maxval / 11).collect(),
            };
            assert_eq!(parse_pgm(&g.to_p5()).unwrap(), g);
        }
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(parse_pgm(b"P6\n1 1\n255\n\0").unwrap_err().0, 0);
        assert!(parse_pgm(b"P2\n2 2\n255\n1 2 3\n").is_err());
        assert!(parse_pgm(b"P2\n1 1\n3\n4\n").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P2\n0 2\n255\n").is_err());
        assert!(parse_pgm(b"P2\n1 1\n70000\n1\n").is_err());
    }

    #[test]
    fn pattern_dimension_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        let g = Graymap {
            width: 32,
            height: 32,
            maxval: 254,
            pixels: vec![127; 32 * 32],
        };
        std::fs::write(&path, g.to_p5()).unwrap();
        assert!(matches!(load_pattern(&path, 64, 64), Err(Error::Format { .. })));
        let t = load_pattern(&path, 32, 32).unwrap();
        assert!(t.iter().all(|&x| (x - 55e-6).abs() < 1e-18));
    }
}

//! 8-bit luminance frames and binary PGM (P5) I/O.

use std::io::{self, BufRead, BufReader, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed PGM: {0}")]
    Format(String),
    #[error("pixel buffer of length {len} does not match {width}x{height}")]
    Size { len: usize, width: u32, height: u32 },
}

/// One camera frame, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub camera_id: u32,
    pub frame_index: u64,
    pub t_s: f64,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl ImageFrame {
    pub fn new(
        camera_id: u32,
        frame_index: u64,
        t_s: f64,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if pixels.len() != width as usize * height as usize {
            return Err(ImageError::Size {
                len: pixels.len(),
                width,
                height,
            });
        }
        Ok(Self {
            camera_id,
            frame_index,
            t_s,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(camera_id: u32, frame_index: u64, t_s: f64, width: u32, height: u32, v: u8) -> Self {
        Self {
            camera_id,
            frame_index,
            t_s,
            width,
            height,
            pixels: vec![v; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    /// Pixel at `(x, y)` with coordinates clamped into the frame.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let cx = x.clamp(0, self.width as i64 - 1) as u32;
        let cy = y.clamp(0, self.height as i64 - 1) as u32;
        self.get(cx, cy)
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_pgm(&mut w, self.width, self.height, &self.pixels)
    }
}

pub fn write_pgm<W: Write>(w: &mut W, width: u32, height: u32, pixels: &[u8]) -> io::Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String, ImageError> {
    let mut tok = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut comment = Vec::new();
            r.read_until(b'\n', &mut comment)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(ImageError::Format("unexpected end of header".into()));
    }
    String::from_utf8(tok).map_err(|_| ImageError::Format("non-ascii header".into()))
}

/// Reads a binary P5 PGM with maxval 255. Returns `(width, height, pixels)`.
pub fn read_pgm<R: Read>(reader: R) -> Result<(u32, u32, Vec<u8>), ImageError> {
    let mut r = BufReader::new(reader);
    let magic = next_token(&mut r)?;
    if magic != "P5" {
        return Err(ImageError::Format(format!("expected P5, found {magic}")));
    }
    let parse = |s: String| {
        s.parse::<u32>()
            .map_err(|_| ImageError::Format(format!("bad header number '{s}'")))
    };
    let width = parse(next_token(&mut r)?)?;
    let height = parse(next_token(&mut r)?)?;
    let maxval = parse(next_token(&mut r)?)?;
    if maxval != 255 {
        return Err(ImageError::Format(format!("unsupported maxval {maxval}")));
    }
    let mut pixels = vec![0u8; width as usize * height as usize];
    r.read_exact(&mut pixels)?;
    Ok((width, height, pixels))
}

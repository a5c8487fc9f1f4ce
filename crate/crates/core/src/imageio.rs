//! PFM, Radiance HDR and PNG codecs plus light-probe loading.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::shade::{LightProbe, Rgb, PROBE_COLS, PROBE_ROWS};

/// Float image, rows stored top to bottom, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3);
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn rgb(&self, x: usize, y: usize) -> Rgb {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            [p[0] as f64; 3]
        } else {
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
    format: &'static str,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            format: self.format,
            offset,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next whitespace-delimited token and its starting offset.
    fn token(&mut self) -> Result<(&'a str, usize)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(start, "unexpected end of header"));
        }
        let tok =
            std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.err(start, "header is not ASCII"))?;
        Ok((tok, start))
    }

    fn line(&mut self) -> Result<(&'a str, usize)> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(self.err(start, "unterminated header line"));
        }
        let line =
            std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.err(start, "header is not ASCII"))?;
        self.pos += 1;
        Ok((line, start))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
        format: "PFM",
    };
    let (magic, at) = c.token()?;
    let channels = match magic {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(c.err(at, format!("bad magic {other:?}"))),
    };
    let dim = |c: &mut Cursor| -> Result<usize> {
        let (tok, at) = c.token()?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(c.err(at, format!("bad dimension {tok:?}"))),
        }
    };
    let width = dim(&mut c)?;
    let height = dim(&mut c)?;
    let (tok, at) = c.token()?;
    let scale: f64 = tok
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| c.err(at, format!("bad scale {tok:?}")))?;
    // exactly one whitespace byte separates the header from the raster
    if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
        return Err(c.err(c.pos, "missing separator after scale"));
    }
    let start = c.pos + 1;
    let count = width * height * channels;
    let need = start + count * 4;
    if bytes.len() < need {
        return Err(c.err(
            bytes.len(),
            format!(
                "raster truncated: expected {} bytes, found {}",
                count * 4,
                bytes.len() - start
            ),
        ));
    }
    let little = scale < 0.0;
    let mut img = Image::new(width, height, channels);
    for row in 0..height {
        // PFM rasters run bottom to top
        let y = height - 1 - row;
        for i in 0..width * channels {
            let o = start + (row * width * channels + i) * 4;
            let b = [bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]];
            img.data[y * width * channels + i] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(img)
}

pub fn encode_pfm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let stride = img.width * img.channels;
    for row in (0..img.height).rev() {
        for v in &img.data[row * stride..(row + 1) * stride] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    decode_pfm(&read_bytes(path)?, path)
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

fn rgbe_to_rgb(p: [u8; 4]) -> [f32; 3] {
    if p[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f32.powi(p[3] as i32 - 136);
    [p[0] as f32 * f, p[1] as f32 * f, p[2] as f32 * f]
}

fn rgb_to_rgbe(c: &[f32]) -> [u8; 4] {
    let v = c[0].max(c[1]).max(c[2]);
    if !(v > 1e-32) {
        return [0; 4];
    }
    let e = v.log2().floor() as i32 + 1;
    let scale = 256.0 / 2f32.powi(e);
    let q = |x: f32| (x.max(0.0) * scale).min(255.0) as u8;
    [q(c[0]), q(c[1]), q(c[2]), (e + 128) as u8]
}

pub fn decode_hdr(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
        format: "Radiance HDR",
    };
    let (magic, _) = c.line()?;
    if !magic.starts_with("#?") {
        return Err(c.err(0, "missing #? signature"));
    }
    loop {
        let (line, at) = c.line()?;
        if line.trim().is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt.trim() != "32-bit_rle_rgbe" {
                return Err(c.err(at, format!("unsupported format {fmt:?}")));
            }
        }
    }
    let (res, at) = c.line()?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (height, width) = match parts.as_slice() {
        ["-Y", h, "+X", w] => match (h.parse::<usize>(), w.parse::<usize>()) {
            (Ok(h), Ok(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(c.err(at, format!("bad resolution {res:?}"))),
        },
        _ => return Err(c.err(at, format!("unsupported resolution line {res:?}"))),
    };
    let mut img = Image::new(width, height, 3);
    let mut scan = vec![[0u8; 4]; width];
    for y in 0..height {
        let at = c.pos;
        let b = &bytes[c.pos.min(bytes.len())..];
        let rle = (8..32768).contains(&width) && b.len() >= 4 && b[0] == 2 && b[1] == 2 && b[2] & 0x80 == 0;
        if rle {
            let w = ((b[2] as usize) << 8) | b[3] as usize;
            if w != width {
                return Err(c.err(at, format!("scanline width {w} does not match {width}")));
            }
            c.pos += 4;
            for ch in 0..4 {
                let mut x = 0;
                while x < width {
                    let at = c.pos;
                    let count = *bytes.get(c.pos).ok_or_else(|| c.err(at, "truncated scanline"))? as usize;
                    c.pos += 1;
                    if count > 128 {
                        let run = count - 128;
                        let v = *bytes.get(c.pos).ok_or_else(|| c.err(c.pos, "truncated run"))?;
                        c.pos += 1;
                        if x + run > width {
                            return Err(c.err(at, "run overflows scanline"));
                        }
                        for px in &mut scan[x..x + run] {
                            px[ch] = v;
                        }
                        x += run;
                    } else {
                        if count == 0 || x + count > width {
                            return Err(c.err(at, "bad literal count"));
                        }
                        let lit = bytes
                            .get(c.pos..c.pos + count)
                            .ok_or_else(|| c.err(c.pos, "truncated literal"))?;
                        for (px, v) in scan[x..x + count].iter_mut().zip(lit) {
                            px[ch] = *v;
                        }
                        c.pos += count;
                        x += count;
                    }
                }
            }
        } else {
            let raw = bytes
                .get(c.pos..c.pos + width * 4)
                .ok_or_else(|| c.err(at, "truncated flat scanline"))?;
            for (px, chunk) in scan.iter_mut().zip(raw.chunks_exact(4)) {
                *px = [chunk[0], chunk[1], chunk[2], chunk[3]];
            }
            c.pos += width * 4;
        }
        for (x, px) in scan.iter().enumerate() {
            img.pixel_mut(x, y).copy_from_slice(&rgbe_to_rgb(*px));
        }
    }
    Ok(img)
}

/// Encodes a 3-channel image; `rle` selects run-length scanlines.
pub fn encode_hdr(img: &Image, rle: bool) -> Vec<u8> {
    assert_eq!(img.channels, 3);
    let mut out = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n".to_vec();
    out.extend_from_slice(format!("-Y {} +X {}\n", img.height, img.width).as_bytes());
    let rle = rle && (8..32768).contains(&img.width);
    for y in 0..img.height {
        let scan: Vec<[u8; 4]> = (0..img.width).map(|x| rgb_to_rgbe(img.pixel(x, y))).collect();
        if !rle {
            scan.iter().for_each(|p| out.extend_from_slice(p));
            continue;
        }
        out.extend_from_slice(&[2, 2, (img.width >> 8) as u8, (img.width & 0xff) as u8]);
        for ch in 0..4 {
            let vals: Vec<u8> = scan.iter().map(|p| p[ch]).collect();
            let mut x = 0;
            while x < vals.len() {
                let mut run = 1;
                while x + run < vals.len() && run < 127 && vals[x + run] == vals[x] {
                    run += 1;
                }
                if run >= 3 {
                    out.push(128 + run as u8);
                    out.push(vals[x]);
                    x += run;
                } else {
                    let start = x;
                    while x < vals.len() && x - start < 128 {
                        if x + 2 < vals.len() && vals[x] == vals[x + 1] && vals[x] == vals[x + 2] {
                            break;
                        }
                        x += 1;
                    }
                    out.push((x - start) as u8);
                    out.extend_from_slice(&vals[start..x]);
                }
            }
        }
    }
    out
}

pub fn read_hdr(path: &Path) -> Result<Image> {
    decode_hdr(&read_bytes(path)?, path)
}

pub fn write_hdr(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_hdr(img, true)).map_err(|e| Error::io(path, e))
}

/// 8-bit preview; linear values are clamped to [0, 1] and optionally
/// raised to 1/2.2.
pub fn to_srgb8(v: f32, gamma: bool) -> u8 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let v = if gamma { v.powf(1.0 / 2.2) } else { v };
    (v * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &Image, gamma: bool) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(if img.channels == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_srgb8(v, gamma)).collect();
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Reads any supported image, choosing the codec by magic bytes.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"PF") || bytes.starts_with(b"Pf") {
        decode_pfm(&bytes, path)
    } else if bytes.starts_with(b"#?") {
        decode_hdr(&bytes, path)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            format: "image",
            offset: 0,
            message: "neither PFM nor Radiance HDR".into(),
        })
    }
}

/// Bilinear resample to the probe grid; wraps horizontally, clamps
/// vertically.
fn resample(img: &Image) -> Vec<Rgb> {
    let mut out = Vec::with_capacity(PROBE_ROWS * PROBE_COLS);
    for r in 0..PROBE_ROWS {
        for c in 0..PROBE_COLS {
            let x = (c as f64 + 0.5) / PROBE_COLS as f64 * img.width as f64 - 0.5;
            let y =
                ((r as f64 + 0.5) / PROBE_ROWS as f64 * img.height as f64 - 0.5).clamp(0.0, (img.height - 1) as f64);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let wrap = |i: f64| (i as i64).rem_euclid(img.width as i64) as usize;
            let (xa, xb) = (wrap(x0), wrap(x0 + 1.0));
            let ya = y0 as usize;
            let yb = (ya + 1).min(img.height - 1);
            let mut v = [0.0; 3];
            for (xi, yi, w) in [
                (xa, ya, (1.0 - fx) * (1.0 - fy)),
                (xb, ya, fx * (1.0 - fy)),
                (xa, yb, (1.0 - fx) * fy),
                (xb, yb, fx * fy),
            ] {
                let p = img.rgb(xi, yi);
                for ch in 0..3 {
                    v[ch] += w * p[ch];
                }
            }
            out.push(v);
        }
    }
    out
}

pub fn probe_from_image(img: &Image, path: &Path) -> Result<LightProbe> {
    let texels = if img.width == PROBE_COLS && img.height == PROBE_ROWS {
        (0..PROBE_ROWS)
            .flat_map(|r| (0..PROBE_COLS).map(move |c| (r, c)))
            .map(|(r, c)| img.rgb(c, r))
            .collect()
    } else {
        warn!(
            "{}: probe is {}x{}, resampling to {PROBE_COLS}x{PROBE_ROWS}",
            path.display(),
            img.width,
            img.height
        );
        resample(img)
    };
    LightProbe::from_texels(texels).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        format: "probe",
        offset: 0,
        message: e.to_string(),
    })
}

pub fn read_probe(path: &Path) -> Result<LightProbe> {
    probe_from_image(&read_image(path)?, path)
}

pub fn probe_to_image(probe: &LightProbe) -> Image {
    let mut img = Image::new(PROBE_COLS, PROBE_ROWS, 3);
    for r in 0..PROBE_ROWS {
        for c in 0..PROBE_COLS {
            let v = probe.get(r, c);
            img.pixel_mut(c, r)
                .copy_from_slice(&[v[0] as f32, v[1] as f32, v[2] as f32]);
        }
    }
    img
}

pub fn write_probe(path: &Path, probe: &LightProbe) -> Result<()> {
    write_pfm(path, &probe_to_image(probe))
}

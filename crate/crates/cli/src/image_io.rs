//! 8-bit PNG and PGM/PPM reading and writing, with a per-thread log of
//! every file read.

use std::cell::RefCell;
use std::fs;
use std::io::{BufReader, Cursor};
use std::path::{Path, PathBuf};

use dsu_core::{RgbImage, ScalarField};

use crate::error::{CliError, Result};

/// Which code path asked for a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Train,
    Eval,
}

thread_local! {
    static READ_LOG: RefCell<Vec<(PathBuf, Purpose)>> = const { RefCell::new(Vec::new()) };
}

fn record(path: &Path, purpose: Purpose) {
    READ_LOG.with(|l| l.borrow_mut().push((path.to_path_buf(), purpose)));
}

/// Takes and clears this thread's read log.
pub fn take_read_log() -> Vec<(PathBuf, Purpose)> {
    READ_LOG.with(|l| std::mem::take(&mut *l.borrow_mut()))
}

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

struct Raw {
    width: usize,
    height: usize,
    channels: usize,
    bytes: Vec<u8>,
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Raw> {
    let bad = |e: png::DecodingError| CliError::Data(format!("{}: {e}", path.display()));
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CliError::Data(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => unreachable!("EXPAND removes palettes"),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    // Rows may be padded; keep exactly width * channels bytes per row.
    let mut out = Vec::with_capacity(width * height * channels);
    for row in buf.chunks(info.line_size).take(height) {
        out.extend_from_slice(&row[..width * channels]);
    }
    Ok(Raw {
        width,
        height,
        channels,
        bytes: out,
    })
}

/// Binary 8-bit PGM (P5) or PPM (P6).
fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Raw> {
    let bad = |m: &str| CliError::Data(format!("{}: {m}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?);
    }
    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("only binary P5/P6 files are supported")),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit (maxval 255) files are supported"));
    }
    pos += 1;
    let len = width * height * channels;
    let data = bytes
        .get(pos..pos + len)
        .ok_or_else(|| bad("truncated pixel data"))?;
    Ok(Raw {
        width,
        height,
        channels,
        bytes: data.to_vec(),
    })
}

fn read_raw(path: &Path, purpose: Purpose) -> Result<Raw> {
    record(path, purpose);
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else {
        decode_pnm(&bytes, path)
    }
}

/// Gray image in [0, 1]. Color inputs are averaged; alpha is dropped.
pub fn read_gray(path: &Path, purpose: Purpose) -> Result<ScalarField> {
    let raw = read_raw(path, purpose)?;
    let gray: Vec<u8> = match raw.channels {
        1 => raw.bytes,
        2 => raw.bytes.chunks(2).map(|p| p[0]).collect(),
        c => raw
            .bytes
            .chunks(c)
            .map(|p| ((u16::from(p[0]) + u16::from(p[1]) + u16::from(p[2]) + 1) / 3) as u8)
            .collect(),
    };
    Ok(ScalarField::from_u8(raw.width, raw.height, &gray)?)
}

/// Color image in [0, 1]. Gray inputs are replicated; alpha is dropped.
pub fn read_rgb(path: &Path, purpose: Purpose) -> Result<RgbImage> {
    let raw = read_raw(path, purpose)?;
    let rgb: Vec<u8> = match raw.channels {
        1 => raw.bytes.iter().flat_map(|&g| [g, g, g]).collect(),
        2 => raw
            .bytes
            .chunks(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        3 => raw.bytes,
        _ => raw
            .bytes
            .chunks(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
    };
    Ok(RgbImage::from_interleaved_u8(raw.width, raw.height, &rgb)?)
}

/// Writes `bytes` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn encode(
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
    path: &Path,
) -> Result<Vec<u8>> {
    let bad = |e: png::EncodingError| CliError::Data(format!("{}: {e}", path.display()));
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(bad)?;
        w.write_image_data(data).map_err(bad)?;
        w.finish().map_err(bad)?;
    }
    Ok(out)
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// 8-bit gray; PGM for `.pgm`/`.pnm`, PNG otherwise.
pub fn write_gray(path: &Path, f: &ScalarField) -> Result<()> {
    let (w, h) = f.dims();
    let bytes = if is_pnm(path) {
        let mut b = format!("P5\n{w} {h}\n255\n").into_bytes();
        b.extend(f.to_u8());
        b
    } else {
        encode(w, h, png::ColorType::Grayscale, &f.to_u8(), path)?
    };
    write_atomic(path, &bytes)
}

/// 8-bit RGB; PPM for `.ppm`/`.pnm`, PNG otherwise.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = img.dims();
    let bytes = if is_pnm(path) {
        let mut b = format!("P6\n{w} {h}\n255\n").into_bytes();
        b.extend(img.to_interleaved_u8());
        b
    } else {
        encode(w, h, png::ColorType::Rgb, &img.to_interleaved_u8(), path)?
    };
    write_atomic(path, &bytes)
}

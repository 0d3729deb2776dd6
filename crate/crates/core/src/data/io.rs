//! Binary PGM images and the corpus manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "index,seed,s_down";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub seed: u64,
    pub s_down: f64,
}

fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn from_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// Writes an `[h, w]` image in `[-1, 1]` as binary PGM with maxval 255.
pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    let [h, w] = *img.shape() else {
        return Err(Error::Shape(format!("expected an [h, w] image, got {:?}", img.shape())));
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(img.data().iter().map(|&v| to_byte(v)));
    fs::write(path, bytes)?;
    Ok(())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("non-ASCII PGM header".into()))
}

/// Reads a binary PGM with maxval 255 back to `[-1, 1]`.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    if next_token(&bytes, &mut pos)? != "P5" {
        return Err(Error::Format("not a binary PGM".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        next_token(&bytes, &mut pos)?
            .parse()
            .map_err(|_| Error::Format(format!("bad PGM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let data = bytes
        .get(pos + 1..pos + 1 + w * h)
        .ok_or_else(|| Error::Format("truncated PGM".into()))?;
    Tensor::new(vec![h, w], data.iter().map(|&b| from_byte(b)).collect())
}

/// Writes `img_00000.pgm`, ... and `manifest.csv` into `dir`.
pub fn write_corpus(dir: &Path, images: &[Tensor], rows: &[ManifestRow]) -> Result<()> {
    if images.len() != rows.len() {
        return Err(Error::Shape("one manifest row per image required".into()));
    }
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.csv"))?;
    writeln!(manifest, "{MANIFEST_HEADER}")?;
    for (img, row) in images.iter().zip(rows) {
        write_pgm(&dir.join(format!("img_{:05}.pgm", row.index)), img)?;
        writeln!(manifest, "{},{},{}", row.index, row.seed, row.s_down)?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Format("manifest header mismatch".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("bad manifest line '{line}'"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(ManifestRow {
                index: f[0].parse().map_err(|_| bad())?,
                seed: f[1].parse().map_err(|_| bad())?,
                s_down: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

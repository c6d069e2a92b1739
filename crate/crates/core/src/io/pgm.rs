//! Binary (P5) portable graymaps.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape("pgm", format!("{} pixels for a {width}x{height} image", pixels.len())));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

/// Reads what `write_pgm` writes (no comments, maxval 255).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = std::fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field '{s}'")));
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(Error::Format("only 8-bit P5 graymaps are supported".into()));
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = data.get(pos..).unwrap_or_default().to_vec();
    if pixels.len() != w * h {
        return Err(Error::Format("PGM pixel data has the wrong size".into()));
    }
    Ok((w, h, pixels))
}

/// Probabilities in [0, 1] to gray levels; brighter is more likely occupied.
pub fn probability_map(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let px: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_pgm(&path, 4, 3, &px).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), (4, 3, px));
        assert!(write_pgm(&path, 5, 3, &[0; 12]).is_err());
        assert_eq!(probability_map(&[0.0, 0.5, 1.0, 2.0]), vec![0, 128, 255, 255]);
    }
}

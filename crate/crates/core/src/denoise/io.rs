//! Grayscale image files: 8-bit PGM/PNG and the real-valued `DCF32` format.
//!
//! `DCF32`: 8-byte magic `DCF32\0\0\0`, height and width as little-endian
//! `u32`, then `height * width` little-endian `f32` values, row-major.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::ByteReader;

pub const DCF32_MAGIC: &[u8; 8] = b"DCF32\0\0\0";

/// Extensions recognised when a directory is read as a corpus.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "png", "dcf32"];

/// Named images from a single file or from every image file in a directory (sorted by name).
pub fn load_corpus(path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if !path.is_dir() {
        return Ok(vec![(stem(path), read_image(path)?)]);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyCorpus(format!("no .pgm, .png or .dcf32 files in {}", path.display())));
    }
    files.iter().map(|p| Ok((stem(p), read_image(p)?))).collect()
}

fn is_dcf32(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("dcf32"))
}

/// Read a PGM, PNG or `DCF32` file as intensities; color images are converted to luma.
pub fn read_image(path: &Path) -> Result<Array2<f64>> {
    if is_dcf32(path) {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        return decode_dcf32(&bytes);
    }
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image { path: path.into(), detail: other.to_string() },
    })?;
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok(Array2::from_shape_vec((h as usize, w as usize), gray.into_raw().into_iter().map(f64::from).collect())
        .expect("buffer matches dimensions"))
}

/// Round and clip to 8 bits.
pub fn to_u8(img: &Array2<f64>) -> Vec<u8> {
    img.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// Write by extension: `.dcf32` keeps real values, anything else is an 8-bit image.
pub fn write_image(path: &Path, img: &Array2<f64>) -> Result<()> {
    if is_dcf32(path) {
        return std::fs::write(path, encode_dcf32(img)).map_err(|e| Error::io(path, e));
    }
    let (h, w) = img.dim();
    let pixels = to_u8(img);
    let image_err = |e: image::ImageError| Error::Image { path: path.into(), detail: e.to_string() };
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        // the generic encoder would pick the PAM (P7) subtype for .pgm
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
        encoder.write_image(&pixels, w as u32, h as u32, ExtendedColorType::L8).map_err(image_err)
    } else {
        let buf = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches dimensions");
        buf.save(path).map_err(image_err)
    }
}

pub fn encode_dcf32(img: &Array2<f64>) -> Vec<u8> {
    let (h, w) = img.dim();
    let mut out = Vec::with_capacity(16 + 4 * h * w);
    out.extend_from_slice(DCF32_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in img.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_dcf32(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != DCF32_MAGIC {
        return Err(Error::Format { offset: 0, detail: "bad DCF32 magic".into() });
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let data = r.take(4 * h * w)?;
    if r.remaining() != 0 {
        return Err(Error::Format { offset: r.offset(), detail: format!("{} trailing bytes", r.remaining()) });
    }
    let values = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(Array2::from_shape_vec((h, w), values).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dcf32_layout_and_round_trip() {
        let img = Array2::from_shape_vec((2, 3), vec![0.5, -1.25, 300.0, 7.0, 8.0, 9.0]).unwrap();
        let bytes = encode_dcf32(&img);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..5], b"DCF32");
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(decode_dcf32(&bytes).unwrap(), img);
        assert!(matches!(decode_dcf32(&bytes[..30]), Err(Error::Truncated { offset: 16, missing: 10 })));
    }

    #[test]
    fn eight_bit_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array2::from_shape_fn((5, 4), |(r, c)| (r * 40 + c) as f64);
        for name in ["a.pgm", "a.png"] {
            let path = dir.path().join(name);
            write_image(&path, &img).unwrap();
            assert_eq!(read_image(&path).unwrap(), img);
        }
        let pgm = std::fs::read(dir.path().join("a.pgm")).unwrap();
        assert_eq!(&pgm[..2], b"P5");
    }

    #[test]
    fn clipping_on_export() {
        let img = Array2::from_shape_vec((1, 4), vec![-3.0, 12.4, 12.6, 400.0]).unwrap();
        assert_eq!(to_u8(&img), vec![0, 12, 13, 255]);
    }

    #[test]
    fn corpus_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::EmptyCorpus(_))));
        let img = Array2::from_elem((3, 3), 9.0);
        write_image(&dir.path().join("b.pgm"), &img).unwrap();
        write_image(&dir.path().join("a.dcf32"), &img).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        let names: Vec<&str> = corpus.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(load_corpus(&dir.path().join("b.pgm")).unwrap()[0].0, "b");
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_image(Path::new("/nonexistent/x.dcf32")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.dcf32"));
    }
}

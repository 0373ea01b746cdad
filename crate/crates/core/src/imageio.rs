//! Raster decoding (binary PPM and 24-bit BMP), the 256-level intensity
//! index, and dataset manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated image data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("pixel buffer holds {found} pixels, dimensions require {expected}")]
    BadPixelCount { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("family {family:?} is assigned to more than one (poison, cluster) pair")]
    InconsistentHierarchy { family: String },
    #[error("manifest has no data rows")]
    EmptyManifest,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Rgb {
    pub const BLACK: Rgb = Rgb::new(0, 0, 0);
    pub const WHITE: Rgb = Rgb::new(255, 255, 255);

    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb { r, g, b }
    }

    /// Euclidean distance in RGB space, in `[0, 441.67]`.
    pub fn distance(self, other: Rgb) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(self, other: Rgb) -> f64 {
        let dr = f64::from(self.r) - f64::from(other.r);
        let dg = f64::from(self.g) - f64::from(other.g);
        let db = f64::from(self.b) - f64::from(other.b);
        dr * dr + dg * dg + db * db
    }

    pub fn channels(self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }

    /// 0 (black) … 255 (white) luminance index with ITU-R 601 weights.
    pub fn intensity(self) -> u8 {
        let y = 0.299 * f64::from(self.r) + 0.587 * f64::from(self.g) + 0.114 * f64::from(self.b);
        y.round().clamp(0.0, 255.0) as u8
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.r, self.g, self.b)
    }
}

/// 8-bit-per-channel raster, row-major, top row first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::UnsupportedFormat(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(ImageError::BadPixelCount {
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        RgbImage {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }
}

/// Per-pixel intensity category, 0 (black) to 255 (white).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedImage {
    pub width: usize,
    pub height: usize,
    pub index: Vec<u8>,
}

impl IndexedImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.index[y * self.width + x]
    }
}

pub fn to_indexed(img: &RgbImage) -> IndexedImage {
    IndexedImage {
        width: img.width,
        height: img.height,
        index: img.pixels.iter().map(|p| p.intensity()).collect(),
    }
}

/// Decodes binary PPM (`P6`) or uncompressed 24-bit BMP, sniffing the magic.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    match bytes {
        [b'P', b'6', ..] => decode_ppm(bytes),
        [b'B', b'M', ..] => decode_bmp(bytes),
        _ => Err(ImageError::UnsupportedFormat("unknown magic".into())),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
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

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => ImageError::TruncatedData {
                    expected: self.pos + 1,
                    found: self.bytes.len(),
                },
                Some(_) => ImageError::UnsupportedFormat(format!("PPM {what} is not a number")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::UnsupportedFormat(format!("PPM {what} out of range")))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::UnsupportedFormat(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!(
            "PPM maxval {maxval} (only 255 is supported)"
        )));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => {
            return Err(ImageError::UnsupportedFormat(
                "PPM header not terminated by whitespace".into(),
            ))
        }
        None => {
            return Err(ImageError::TruncatedData {
                expected: cur.pos + 1,
                found: bytes.len(),
            })
        }
    }
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| ImageError::UnsupportedFormat("PPM dimensions overflow".into()))?;
    let data = &bytes[cur.pos..];
    if data.len() < n {
        return Err(ImageError::TruncatedData {
            expected: n,
            found: data.len(),
        });
    }
    let pixels = data[..n]
        .chunks_exact(3)
        .map(|c| Rgb::new(c[0], c[1], c[2]))
        .collect();
    RgbImage::new(width, height, pixels)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.pixels.len() * 3);
    for p in &img.pixels {
        out.extend_from_slice(&p.channels());
    }
    out
}

const BMP_FILE_HEADER: usize = 14;
const BMP_INFO_HEADER: usize = 40;

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn le_i32(b: &[u8], at: usize) -> i32 {
    le_u32(b, at) as i32
}

#[inline]
fn bmp_stride(width: usize) -> usize {
    (width * 3 + 3) & !3
}

fn decode_bmp(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    if bytes.len() < BMP_FILE_HEADER + BMP_INFO_HEADER {
        return Err(ImageError::TruncatedData {
            expected: BMP_FILE_HEADER + BMP_INFO_HEADER,
            found: bytes.len(),
        });
    }
    let data_offset = le_u32(bytes, 10) as usize;
    let info_size = le_u32(bytes, 14) as usize;
    if info_size < BMP_INFO_HEADER {
        return Err(ImageError::UnsupportedFormat(format!(
            "BMP info header of {info_size} bytes"
        )));
    }
    let width = le_i32(bytes, 18);
    let height = le_i32(bytes, 22);
    let bit_count = le_u16(bytes, 28);
    let compression = le_u32(bytes, 30);
    if bit_count != 24 {
        return Err(ImageError::UnsupportedFormat(format!(
            "BMP bit depth {bit_count} (only 24 is supported)"
        )));
    }
    if compression != 0 {
        return Err(ImageError::UnsupportedFormat(format!(
            "compressed BMP (method {compression})"
        )));
    }
    if width <= 0 || height == 0 {
        return Err(ImageError::UnsupportedFormat(format!(
            "BMP dimension {width}x{height}"
        )));
    }
    let width = width as usize;
    // Negative height marks a top-down bitmap.
    let top_down = height < 0;
    let height = height.unsigned_abs() as usize;
    let stride = bmp_stride(width);
    let expected = stride * height;
    let payload = bytes.get(data_offset..).unwrap_or(&[]);
    if payload.len() < expected {
        return Err(ImageError::TruncatedData {
            expected,
            found: payload.len(),
        });
    }
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        let src_row = if top_down { row } else { height - 1 - row };
        let line = &payload[src_row * stride..src_row * stride + width * 3];
        pixels.extend(line.chunks_exact(3).map(|c| Rgb::new(c[2], c[1], c[0])));
    }
    RgbImage::new(width, height, pixels)
}

/// Bottom-up 24-bit BMP with zeroed row padding.
pub fn encode_bmp(img: &RgbImage) -> Vec<u8> {
    let stride = bmp_stride(img.width);
    let data_size = stride * img.height;
    let offset = BMP_FILE_HEADER + BMP_INFO_HEADER;
    let mut out = Vec::with_capacity(offset + data_size);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&((offset + data_size) as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&(offset as u32).to_le_bytes());
    out.extend_from_slice(&(BMP_INFO_HEADER as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as i32).to_le_bytes());
    out.extend_from_slice(&(img.height as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(data_size as u32).to_le_bytes());
    // 72 dpi
    out.extend_from_slice(&2835u32.to_le_bytes());
    out.extend_from_slice(&2835u32.to_le_bytes());
    out.extend_from_slice(&[0; 8]);
    let pad = stride - img.width * 3;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            let p = img.get(x, y);
            out.extend_from_slice(&[p.b, p.g, p.r]);
        }
        out.extend(std::iter::repeat_n(0u8, pad));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written in the manifest; relative paths are relative to the manifest file.
    pub path: PathBuf,
    pub family: String,
    pub poison: bool,
    pub cluster: String,
    pub split: Split,
}

impl ManifestEntry {
    pub fn resolve(&self, base: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            base.join(&self.path)
        }
    }
}

pub const MANIFEST_HEADER: &str = "path,family,poison,cluster,split";

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        Some((_, h)) => {
            return Err(ManifestError::MalformedRow {
                line: 1,
                reason: format!("expected header {MANIFEST_HEADER:?}, found {h:?}"),
            })
        }
        None => return Err(ManifestError::EmptyManifest),
    }

    let mut entries = Vec::new();
    let mut hierarchy: BTreeMap<String, (bool, String)> = BTreeMap::new();
    for (i, raw) in lines {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let malformed = |reason: String| ManifestError::MalformedRow { line, reason };
        let cols: Vec<&str> = row.split(',').collect();
        let [path, family, poison, cluster, split] = cols[..] else {
            return Err(malformed(format!(
                "expected 5 columns, found {}",
                cols.len()
            )));
        };
        if path.is_empty() {
            return Err(malformed("empty path".into()));
        }
        if family.is_empty() {
            return Err(malformed("empty family".into()));
        }
        let poison = match poison {
            "0" => false,
            "1" => true,
            other => return Err(malformed(format!("poison must be 0 or 1, found {other:?}"))),
        };
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(malformed(format!(
                    "split must be train or test, found {other:?}"
                )))
            }
        };
        let pair = (poison, cluster.to_string());
        match hierarchy.get(family) {
            Some(existing) if *existing != pair => {
                return Err(ManifestError::InconsistentHierarchy {
                    family: family.to_string(),
                })
            }
            Some(_) => {}
            None => {
                hierarchy.insert(family.to_string(), pair);
            }
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(path),
            family: family.to_string(),
            poison,
            cluster: cluster.to_string(),
            split,
        });
    }
    if entries.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }
    Ok(entries)
}

pub fn write_manifest<W: Write>(mut w: W, entries: &[ManifestEntry]) -> std::io::Result<()> {
    writeln!(w, "{MANIFEST_HEADER}")?;
    for e in entries {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.path.display(),
            e.family,
            u8::from(e.poison),
            e.cluster,
            e.split
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_two_pixels() {
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixels(), &[Rgb::new(255, 0, 0), Rgb::new(0, 0, 255)]);
    }

    #[test]
    fn ppm_zero_dimension_rejected() {
        assert!(matches!(
            decode_image(b"P6 0 0 255\n"),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn ppm_comments_and_maxval() {
        let mut bytes = b"P6\n# made by hand\n1 # width\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(decode_image(&bytes).unwrap().get(0, 0), Rgb::new(1, 2, 3));
        assert!(matches!(
            decode_image(b"P6 1 1 65535\n\0\0\0\0\0\0"),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn ppm_truncated() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0; 11]);
        assert_eq!(
            decode_image(&bytes),
            Err(ImageError::TruncatedData {
                expected: 12,
                found: 11
            })
        );
    }

    #[test]
    fn unknown_magic() {
        assert!(matches!(
            decode_image(b"\x89PNG\r\n"),
            Err(ImageError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_image(b""),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn bmp_full_frame_white() {
        let img = RgbImage::filled(856, 804, Rgb::WHITE);
        let bytes = encode_bmp(&img);
        let back = decode_image(&bytes).unwrap();
        assert_eq!((back.width(), back.height()), (856, 804));
        assert!(back.pixels().iter().all(|&p| p == Rgb::WHITE));
    }

    #[test]
    fn bmp_rows_are_bottom_up_and_padded() {
        // 1x2 image: stride is 4 bytes.
        let img = RgbImage::new(1, 2, vec![Rgb::new(1, 2, 3), Rgb::new(4, 5, 6)]).unwrap();
        let bytes = encode_bmp(&img);
        assert_eq!(bytes.len(), 54 + 8);
        // First stored row is the bottom image row, in BGR order, then one zero pad byte.
        assert_eq!(&bytes[54..62], &[6, 5, 4, 0, 3, 2, 1, 0]);
        assert_eq!(decode_image(&bytes).unwrap(), img);
    }

    #[test]
    fn bmp_rejects_other_depths_and_compression() {
        let img = RgbImage::filled(2, 2, Rgb::BLACK);
        let mut bytes = encode_bmp(&img);
        bytes[28] = 32;
        assert!(matches!(
            decode_image(&bytes),
            Err(ImageError::UnsupportedFormat(_))
        ));
        let mut bytes = encode_bmp(&img);
        bytes[30] = 1;
        assert!(matches!(
            decode_image(&bytes),
            Err(ImageError::UnsupportedFormat(_))
        ));
        let bytes = encode_bmp(&img);
        assert!(matches!(
            decode_image(&bytes[..bytes.len() - 1]),
            Err(ImageError::TruncatedData { .. })
        ));
    }

    #[test]
    fn indexed_values() {
        let img = RgbImage::new(
            4,
            1,
            vec![
                Rgb::BLACK,
                Rgb::WHITE,
                Rgb::new(255, 0, 0),
                Rgb::new(128, 128, 128),
            ],
        )
        .unwrap();
        assert_eq!(to_indexed(&img).index, vec![0, 255, 76, 128]);
        for v in 0..=255u8 {
            assert_eq!(Rgb::new(v, v, v).intensity(), v);
        }
    }

    #[test]
    fn manifest_row() {
        let m = parse_manifest(
            "path,family,poison,cluster,split\nimgs/a.ppm,Istiophoridae,0,billfish,train\n",
        )
        .unwrap();
        assert_eq!(
            m,
            vec![ManifestEntry {
                path: "imgs/a.ppm".into(),
                family: "Istiophoridae".into(),
                poison: false,
                cluster: "billfish".into(),
                split: Split::Train,
            }]
        );
    }

    #[test]
    fn manifest_errors() {
        let hdr = "path,family,poison,cluster,split\n";
        assert!(matches!(
            parse_manifest(hdr),
            Err(ManifestError::EmptyManifest)
        ));
        assert!(matches!(
            parse_manifest(&format!("{hdr}a.ppm,X,0,c,train\nb.ppm,X,1,c,test\n")),
            Err(ManifestError::InconsistentHierarchy { family }) if family == "X"
        ));
        assert!(matches!(
            parse_manifest(&format!("{hdr}a.ppm,X,0,c\n")),
            Err(ManifestError::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            parse_manifest(&format!("{hdr}a.ppm,X,2,c,train\n")),
            Err(ManifestError::MalformedRow { .. })
        ));
        assert!(matches!(
            parse_manifest(&format!("{hdr}a.ppm,X,0,c,validate\n")),
            Err(ManifestError::MalformedRow { .. })
        ));
        assert!(matches!(
            parse_manifest("file,label\na,b\n"),
            Err(ManifestError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn manifest_write_then_parse() {
        let entries = vec![
            ManifestEntry {
                path: "x/Poison_fish_test_0.ppm".into(),
                family: "Poison fish".into(),
                poison: true,
                cluster: "poison".into(),
                split: Split::Test,
            },
            ManifestEntry {
                path: "x/Scombridae_train_0.ppm".into(),
                family: "Scombridae".into(),
                poison: false,
                cluster: "pelagic".into(),
                split: Split::Train,
            },
        ];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &entries).unwrap();
        assert_eq!(
            parse_manifest(std::str::from_utf8(&buf).unwrap()).unwrap(),
            entries
        );
    }
}

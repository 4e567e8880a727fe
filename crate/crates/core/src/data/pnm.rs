//! Binary PPM (P6) and PGM (P5) writers plus a small reader for both.

use super::{LabelMap, IGNORE_LABEL};
use crate::error::{bail, Result};
use crate::tensorkit::Tensor;

pub const UNKNOWN_CLASS_RGB: [u8; 3] = [255, 0, 255];

pub const DEFAULT_PALETTE: [[u8; 3]; 10] = [
    [48, 48, 48],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [70, 240, 240],
    [145, 30, 180],
    [210, 245, 60],
    [250, 190, 212],
];

/// Class index → RGB colour table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette(pub Vec<[u8; 3]>);

impl Default for Palette {
    fn default() -> Self {
        Palette(DEFAULT_PALETTE.to_vec())
    }
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Renders a class map; ignored pixels are black, unknown classes magenta.
pub fn export_ppm(labels: &LabelMap, palette: &Palette) -> Vec<u8> {
    let mut out = header("P6", labels.width(), labels.height());
    let mut warned = false;
    for &l in labels.as_slice() {
        let rgb = if l == IGNORE_LABEL {
            [0, 0, 0]
        } else if let Some(c) = palette.0.get(l as usize) {
            *c
        } else {
            if !warned {
                log::warn!("class {l} has no palette entry; rendering magenta");
                warned = true;
            }
            UNKNOWN_CLASS_RGB
        };
        out.extend_from_slice(&rgb);
    }
    out
}

fn to_byte(x: f64) -> u8 {
    (255.0 * x.clamp(0.0, 1.0)).round() as u8
}

/// Writes an H×W×3 image with values in [0, 1].
pub fn export_image_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let &[h, w, 3] = image.shape() else {
        bail!(Argument, "PPM export needs H×W×3, got {:?}", image.shape());
    };
    let mut out = header("P6", w, h);
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Writes an H×W map with values in [0, 1] as 8-bit grey (`round(255·x)`).
pub fn export_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let &[h, w] = map.shape() else {
        bail!(Argument, "PGM export needs H×W, got {:?}", map.shape());
    };
    let mut out = header("P5", w, h);
    out.extend(map.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// A decoded 8-bit PNM image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl PnmImage {
    /// H×W×channels tensor scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[self.height, self.width, self.channels],
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
        .expect("dimensions checked while parsing")
    }
}

/// Parses binary P5/P6 data with maxval 255.
pub fn parse_pnm(bytes: &[u8]) -> Result<PnmImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!(Format, "truncated PNM header");
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => bail!(Format, "unsupported PNM magic {m}"),
    };
    let num = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| crate::Error::Format(format!("bad PNM number {s:?}")))
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 || width == 0 || height == 0 {
        bail!(Format, "unsupported PNM geometry {width}×{height} maxval {maxval}");
    }
    let n = width * height * channels;
    if bytes.len() < pos + n {
        bail!(Format, "PNM raster truncated");
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

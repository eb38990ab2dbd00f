//! PNG previews of image stacks and the `TSIM` binary tensor format.
//!
//! `TSIM` layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "TSIM"
//! version  u32      1
//! ndim     u32
//! dims     ndim x u64
//! payload  prod(dims) x f32 (IEEE-754, row-major)
//! crc      u32      CRC-32 (IEEE) of the payload bytes
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::encode::{ImageStack, Layout};
use crate::nn::Tensor;
use crate::{Error, Result};

pub const TSIM_MAGIC: &[u8; 4] = b"TSIM";
pub const TSIM_VERSION: u32 = 1;

/// Maps `v` from `[lo, hi]` onto `0..=255`, rounding halves up.
pub fn to_pixel(v: f64, lo: f64, hi: f64) -> u8 {
    let scaled = (v - lo) / (hi - lo) * 255.0;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes a 1-plane (gray) or 3-plane (RGB) stack as PNG bytes.
pub fn png_bytes(stack: &ImageStack) -> Result<Vec<u8>> {
    let color = match (stack.layout, stack.planes.len()) {
        (Layout::RgbXyz, 3) => png::ColorType::Rgb,
        (Layout::GraySingle, 1) => png::ColorType::Grayscale,
        (Layout::PlanesXyza, _) => {
            return Err(Error::UnsupportedLayout(
                "4-plane stacks have no PNG form; write them as TSIM".into(),
            ))
        }
        (layout, n) => {
            return Err(Error::UnsupportedLayout(format!(
                "{layout:?} stack with {n} planes"
            )))
        }
    };
    let n = stack.side();
    if stack.planes.iter().any(|p| p.n != n) {
        return Err(Error::Shape("image planes differ in size".into()));
    }
    let channels = stack.planes.len();
    let mut pixels = vec![0u8; n * n * channels];
    for (c, plane) in stack.planes.iter().enumerate() {
        let (lo, hi) = plane.value_range();
        for (k, &v) in plane.matrix.iter().enumerate() {
            pixels[k * channels + c] = to_pixel(v, lo, hi);
        }
    }

    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, n as u32, n as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::NoFilter);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::Format(format!("png finish: {e}")))?;
    }
    Ok(out)
}

pub fn render_png(stack: &ImageStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = png_bytes(stack)?;
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

/// Serializes `t` in `TSIM` form.
pub fn tsim_bytes(t: &Tensor<f32>) -> Result<Vec<u8>> {
    if !t.all_finite() {
        return Err(Error::Domain("TSIM payloads must be finite".into()));
    }
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 4 * t.len() + 4);
    out.extend_from_slice(TSIM_MAGIC);
    out.extend_from_slice(&TSIM_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let payload_start = out.len();
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corruption(format!("truncated TSIM file while reading {what}")))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn u32_at(bytes: &[u8], at: &mut usize, what: &str) -> Result<u32> {
    let s = take(bytes, at, 4, what)?;
    Ok(u32::from_le_bytes(s.try_into().expect("4 bytes")))
}

/// Header fields of a `TSIM` buffer, without touching the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsimHeader {
    pub version: u32,
    pub dims: Vec<usize>,
}

fn parse_header(bytes: &[u8], at: &mut usize) -> Result<TsimHeader> {
    let magic = take(bytes, at, 4, "magic").map_err(|_| Error::Format("not a TSIM file".into()))?;
    if magic != TSIM_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u32_at(bytes, at, "version")?;
    if version != TSIM_VERSION {
        return Err(Error::Format(format!("unsupported TSIM version {version}")));
    }
    let ndim = u32_at(bytes, at, "ndim")? as usize;
    let mut dims = Vec::with_capacity(ndim.min(16));
    for _ in 0..ndim {
        let s = take(bytes, at, 8, "dims")?;
        let d = u64::from_le_bytes(s.try_into().expect("8 bytes"));
        dims.push(
            usize::try_from(d).map_err(|_| Error::Corruption(format!("dimension {d} too large")))?,
        );
    }
    Ok(TsimHeader { version, dims })
}

pub fn tsim_header(bytes: &[u8]) -> Result<TsimHeader> {
    parse_header(bytes, &mut 0)
}

/// Parses a `TSIM` buffer, verifying length and checksum.
pub fn parse_tsim(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut at = 0;
    let header = parse_header(bytes, &mut at)?;
    let count = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corruption("payload size overflows".into()))?;
    let payload = take(bytes, &mut at, count, "payload")?;
    let crc = u32_at(bytes, &mut at, "checksum")?;
    if at != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after checksum",
            bytes.len() - at
        )));
    }
    let actual = crc32fast::hash(payload);
    if actual != crc {
        return Err(Error::Corruption(format!(
            "checksum mismatch: stored {crc:08x}, computed {actual:08x}"
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(header.dims, values)
}

pub fn write_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = tsim_bytes(t)?;
    let f = fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = BufWriter::new(f);
    std::io::Write::write_all(&mut w, &bytes).map_err(|e| Error::io_at(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    parse_tsim(&bytes)
}

/// Stack values as a `[planes, n, n]` tensor.
pub fn stack_tensor(stack: &ImageStack) -> Tensor<f32> {
    Tensor::new(stack.dims(), stack.to_f32()).expect("stack dims match values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{EncodedImage, Method};
    use proptest::prelude::*;

    fn plane(method: Method, values: Vec<f64>) -> EncodedImage {
        let n = (values.len() as f64).sqrt() as usize;
        EncodedImage {
            method,
            n,
            matrix: values,
            source_channel: "x".into(),
        }
    }

    #[test]
    fn pixel_mapping() {
        assert_eq!(to_pixel(-1.0, -1.0, 1.0), 0);
        assert_eq!(to_pixel(1.0, -1.0, 1.0), 255);
        assert_eq!(to_pixel(0.0, -1.0, 1.0), 128);
        assert_eq!(to_pixel(0.5, 0.0, 1.0), 128);
        assert_eq!(to_pixel(1.0, 0.0, 1.0), 255);
    }

    #[test]
    fn tsim_layout_2x2() {
        let t = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = tsim_bytes(&t).unwrap();
        assert_eq!(b.len(), 4 + 4 + 4 + 16 + 16 + 4);
        assert_eq!(&b[..4], b"TSIM");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..20], &2u64.to_le_bytes());
        assert_eq!(&b[28..32], &1.0f32.to_le_bytes());
        assert_eq!(parse_tsim(&b).unwrap(), t);
    }

    #[test]
    fn tsim_scalar() {
        let t = Tensor::scalar(3.5f32);
        let b = tsim_bytes(&t).unwrap();
        assert_eq!(b.len(), 12 + 4 + 4);
        assert_eq!(parse_tsim(&b).unwrap(), t);
    }

    #[test]
    fn tsim_errors() {
        let t = Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let good = tsim_bytes(&t).unwrap();

        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(parse_tsim(&b), Err(Error::Format(_))));

        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(parse_tsim(&b), Err(Error::Format(_))));

        let b = &good[..good.len() - 6];
        assert!(matches!(parse_tsim(b), Err(Error::Corruption(_))));

        let mut b = good.clone();
        b[22] ^= 0x01;
        assert!(matches!(parse_tsim(&b), Err(Error::Corruption(_))));

        let mut b = good;
        b.push(0);
        assert!(matches!(parse_tsim(&b), Err(Error::Corruption(_))));

        assert!(tsim_bytes(&Tensor::new(vec![1], vec![f32::NAN]).unwrap()).is_err());
    }

    #[test]
    fn png_is_deterministic_and_decodes() {
        let gaf = plane(Method::Gasf, vec![-1.0, 0.0, 0.5, 1.0]);
        let stack = ImageStack {
            layout: Layout::GraySingle,
            planes: vec![gaf],
        };
        let a = png_bytes(&stack).unwrap();
        assert_eq!(a, png_bytes(&stack).unwrap());

        let dec = png::Decoder::new(std::io::Cursor::new(a));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (2, 2));
        assert_eq!(&buf[..4], &[0, 128, 191, 255]);
    }

    #[test]
    fn png_rgb_channel_order() {
        let stack = ImageStack {
            layout: Layout::RgbXyz,
            planes: vec![
                plane(Method::Mtf, vec![1.0]),
                plane(Method::Mtf, vec![0.0]),
                plane(Method::Mtf, vec![0.5]),
            ],
        };
        let bytes = png_bytes(&stack).unwrap();
        let mut reader = png::Decoder::new(std::io::Cursor::new(bytes))
            .read_info()
            .unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        reader.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..3], &[255, 0, 128]);
    }

    #[test]
    fn png_rejects_four_planes() {
        let p = plane(Method::Gasf, vec![0.0]);
        let stack = ImageStack {
            layout: Layout::PlanesXyza,
            planes: vec![p.clone(), p.clone(), p.clone(), p],
        };
        assert!(matches!(png_bytes(&stack), Err(Error::UnsupportedLayout(_))));
    }

    #[test]
    fn render_png_reports_bad_path() {
        let stack = ImageStack {
            layout: Layout::GraySingle,
            planes: vec![plane(Method::Gasf, vec![0.0])],
        };
        let err = render_png(&stack, "/nonexistent-dir/x.png").unwrap_err();
        assert!(err.is_io());
    }

    proptest! {
        #[test]
        fn tsim_round_trip(
            dims in prop::collection::vec(1usize..6, 0..=4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = dims.iter().product();
            let values: Vec<f32> = (0..n).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let t = Tensor::new(dims, values).unwrap();
            let back = parse_tsim(&tsim_bytes(&t).unwrap()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

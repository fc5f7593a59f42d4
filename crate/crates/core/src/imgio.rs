//! Minimal PNM (PGM/PPM) image I/O plus the small raster utilities the
//! CLI needs: PSNR and seeded Gaussian noise.
//!
//! Supported formats: P2/P5 (gray) and P3/P6 (RGB), maxval 255 or 65535,
//! 16-bit samples big-endian. Pixels are held planar as f64 in [0, 1];
//! values outside that range (e.g. sharpening overshoot) survive in memory
//! and are clamped only when written.

use std::path::Path;

use thiserror::Error;

use crate::error::TvError;
use crate::testkit::SplitMix64;
use crate::types::ChannelStack;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("unsupported magic number (want P2, P3, P5, or P6)")]
    BadMagic,
    #[error("malformed header: {detail}")]
    BadHeader { detail: String },
    #[error("pixel data ends early")]
    TruncatedData,
    #[error("unsupported maxval {got} (want 255 or 65535)")]
    UnsupportedMaxval { got: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// In-memory image: 1 (gray) or 3 (RGB) planes, planar storage, nominal
/// sample range [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    channels: usize,
    height: usize,
    width: usize,
    samples: Vec<f64>,
}

impl RasterImage {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        samples: Vec<f64>,
    ) -> Result<Self, TvError> {
        if channels != 1 && channels != 3 {
            return Err(TvError::ShapeMismatch {
                context: "raster channels (want 1 or 3)",
                expected: 1,
                got: channels,
            });
        }
        if height == 0 || width == 0 {
            return Err(TvError::EmptyShape {
                context: "raster image",
            });
        }
        if samples.len() != channels * height * width {
            return Err(TvError::ShapeMismatch {
                context: "raster samples",
                expected: channels * height * width,
                got: samples.len(),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(TvError::NonFinite {
                context: "raster image",
            });
        }
        Ok(RasterImage {
            channels,
            height,
            width,
            samples,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// View as the solver-side stack type (same planar layout).
    pub fn to_stack(&self) -> ChannelStack {
        ChannelStack::new(self.channels, self.height, self.width, self.samples.clone())
            .expect("raster image is a valid stack")
    }

    /// Converts a solved stack back to an image, clamping into [0, 1].
    /// Fails when the stack has a channel count no PNM format can hold.
    pub fn from_stack_clamped(stack: &ChannelStack) -> Result<Self, TvError> {
        if stack.channels() != 1 && stack.channels() != 3 {
            return Err(TvError::ShapeMismatch {
                context: "raster channels (want 1 or 3)",
                expected: 1,
                got: stack.channels(),
            });
        }
        Ok(RasterImage {
            channels: stack.channels(),
            height: stack.height(),
            width: stack.width(),
            samples: stack.values().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }
}

struct Tokenizer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokenizer<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Tokenizer { bytes, pos: 0 }
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn next_number(&mut self) -> Result<u64, PnmError> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            if self.pos >= self.bytes.len() {
                return Err(PnmError::TruncatedData);
            }
            return Err(PnmError::BadHeader {
                detail: format!(
                    "expected a number, found byte 0x{:02x}",
                    self.bytes[self.pos]
                ),
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse::<u64>().map_err(|_| PnmError::BadHeader {
            detail: format!("number out of range: {text}"),
        })
    }

    /// Consumes the single whitespace byte that separates the header from
    /// raw data in binary formats.
    fn expect_single_whitespace(&mut self) -> Result<(), PnmError> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(PnmError::BadHeader {
                detail: "missing whitespace before binary data".to_string(),
            })
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos.min(self.bytes.len())..]
    }
}

const MAX_DIM: u64 = 1 << 20;
const MAX_SAMPLES: u64 = 1 << 28;

/// Parses a PNM byte buffer (P2/P3 ascii, P5/P6 binary; maxval 255 or
/// 65535, 16-bit big-endian). Samples come out in [0, 1] planar order.
pub fn parse_pnm(bytes: &[u8]) -> Result<RasterImage, PnmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PnmError::BadMagic);
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1usize, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        _ => return Err(PnmError::BadMagic),
    };
    let mut tok = Tokenizer::new(&bytes[2..]);
    let width = tok.next_number()?;
    let height = tok.next_number()?;
    let maxval = tok.next_number()?;
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(PnmError::BadHeader {
            detail: format!("bad dimensions {width} x {height}"),
        });
    }
    if maxval != 255 && maxval != 65535 {
        return Err(PnmError::UnsupportedMaxval { got: maxval });
    }
    let count = width * height * channels as u64;
    if count > MAX_SAMPLES {
        return Err(PnmError::BadHeader {
            detail: format!("image too large: {count} samples"),
        });
    }
    let count = count as usize;
    let scale = 1.0 / maxval as f64;

    // Interleaved on disk; store planar.
    let (w, h) = (width as usize, height as usize);
    let mut planar = vec![0.0f64; count];
    let mut store = |idx: usize, raw: u64| -> Result<(), PnmError> {
        if raw > maxval {
            return Err(PnmError::BadHeader {
                detail: format!("sample value {raw} exceeds maxval {maxval}"),
            });
        }
        let pixel = idx / channels;
        let c = idx % channels;
        planar[c * (w * h) + pixel] = raw as f64 * scale;
        Ok(())
    };

    if binary {
        tok.expect_single_whitespace()?;
        let data = tok.rest();
        let bytes_per = if maxval == 255 { 1 } else { 2 };
        if data.len() < count * bytes_per {
            return Err(PnmError::TruncatedData);
        }
        for i in 0..count {
            let raw = if bytes_per == 1 {
                data[i] as u64
            } else {
                u64::from(data[2 * i]) << 8 | u64::from(data[2 * i + 1])
            };
            store(i, raw)?;
        }
    } else {
        for i in 0..count {
            let raw = tok.next_number()?;
            store(i, raw)?;
        }
    }
    RasterImage::new(channels, h, w, planar).map_err(|e| PnmError::BadHeader {
        detail: e.to_string(),
    })
}

/// How to serialize an image: raw vs ascii samples, 8- vs 16-bit depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PnmWriteOptions {
    pub binary: bool,
    pub sixteen_bit: bool,
}

impl Default for PnmWriteOptions {
    fn default() -> Self {
        PnmWriteOptions {
            binary: true,
            sixteen_bit: false,
        }
    }
}

/// Serializes an image to PNM bytes. Samples are clamped to [0, 1] and
/// quantized by rounding half away from zero. Ascii output keeps lines
/// at 70 characters or less.
pub fn encode_pnm(img: &RasterImage, opts: PnmWriteOptions) -> Vec<u8> {
    let maxval: u64 = if opts.sixteen_bit { 65535 } else { 255 };
    let magic = match (img.channels, opts.binary) {
        (1, false) => "P2",
        (3, false) => "P3",
        (1, true) => "P5",
        (3, true) => "P6",
        _ => unreachable!("channel count validated at construction"),
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width, img.height).into_bytes();

    let quant = |v: f64| -> u64 {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round();
        (q as u64).min(maxval)
    };
    let interleaved = (0..img.height * img.width * img.channels).map(|i| {
        let pixel = i / img.channels;
        let c = i % img.channels;
        quant(img.samples[c * (img.height * img.width) + pixel])
    });

    if opts.binary {
        for q in interleaved {
            if opts.sixteen_bit {
                out.push((q >> 8) as u8);
            }
            out.push((q & 0xff) as u8);
        }
    } else {
        let mut line_len = 0usize;
        for q in interleaved {
            let tok = q.to_string();
            if line_len == 0 {
                out.extend_from_slice(tok.as_bytes());
                line_len = tok.len();
            } else if line_len + 1 + tok.len() <= 70 {
                out.push(b' ');
                out.extend_from_slice(tok.as_bytes());
                line_len += 1 + tok.len();
            } else {
                out.push(b'\n');
                out.extend_from_slice(tok.as_bytes());
                line_len = tok.len();
            }
        }
        out.push(b'\n');
    }
    out
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<RasterImage, PnmError> {
    parse_pnm(&std::fs::read(path)?)
}

pub fn write_pnm(
    path: impl AsRef<Path>,
    img: &RasterImage,
    opts: PnmWriteOptions,
) -> Result<(), PnmError> {
    Ok(std::fs::write(path, encode_pnm(img, opts))?)
}

/// Peak signal-to-noise ratio in dB with peak 1.0 (the nominal sample
/// range). Identical images give +infinity.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64, TvError> {
    if a.channels != b.channels || a.height != b.height || a.width != b.width {
        return Err(TvError::ShapeMismatch {
            context: "psnr",
            expected: a.samples.len(),
            got: b.samples.len(),
        });
    }
    let mse: f64 = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.samples.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Adds seeded i.i.d. Gaussian noise and clamps back into [0, 1].
/// `sigma` must be finite and nonnegative.
pub fn add_gaussian_noise(img: &RasterImage, sigma: f64, seed: u64) -> RasterImage {
    assert!(
        sigma.is_finite() && sigma >= 0.0,
        "noise sigma must be finite and nonnegative"
    );
    let mut rng = SplitMix64::new(seed);
    let samples = img
        .samples
        .iter()
        .map(|v| (v + sigma * rng.next_normal()).clamp(0.0, 1.0))
        .collect();
    RasterImage {
        channels: img.channels,
        height: img.height,
        width: img.width,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(vals: &[f64], h: usize, w: usize) -> RasterImage {
        RasterImage::new(1, h, w, vals.to_vec()).unwrap()
    }

    #[test]
    fn parses_ascii_gray_with_comments() {
        let text = b"P2 # comment\n# another comment\n3 2\n255\n0 128 255\n64 32 16\n";
        let img = parse_pnm(text).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (1, 2, 3));
        assert!((img.samples()[0] - 0.0).abs() < 1e-12);
        assert!((img.samples()[1] - 128.0 / 255.0).abs() < 1e-12);
        assert!((img.samples()[2] - 1.0).abs() < 1e-12);
        assert!((img.samples()[5] - 16.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn parses_binary_gray_and_rgb() {
        let mut p5 = b"P5\n2 2\n255\n".to_vec();
        p5.extend_from_slice(&[0, 255, 128, 64]);
        let img = parse_pnm(&p5).unwrap();
        assert_eq!(img.channels(), 1);
        assert!((img.samples()[1] - 1.0).abs() < 1e-12);

        // P6 stores pixels interleaved; we keep planes.
        let mut p6 = b"P6\n1 2\n255\n".to_vec();
        p6.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        let img = parse_pnm(&p6).unwrap();
        assert_eq!(img.channels(), 3);
        let s = img.samples();
        assert!((s[0] * 255.0 - 10.0).abs() < 1e-9); // red plane
        assert!((s[1] * 255.0 - 40.0).abs() < 1e-9);
        assert!((s[2] * 255.0 - 20.0).abs() < 1e-9); // green plane
        assert!((s[4] * 255.0 - 30.0).abs() < 1e-9); // blue plane
    }

    #[test]
    fn parses_sixteen_bit_big_endian() {
        let mut p5 = b"P5 2 1 65535 ".to_vec();
        p5.extend_from_slice(&[0x00, 0x01, 0xff, 0xff]);
        let img = parse_pnm(&p5).unwrap();
        assert!((img.samples()[0] - 1.0 / 65535.0).abs() < 1e-15);
        assert!((img.samples()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(
            parse_pnm(b"P7\n1 1\n255\n0"),
            Err(PnmError::BadMagic)
        ));
        assert!(matches!(
            parse_pnm(b"X2\n1 1\n255\n0"),
            Err(PnmError::BadMagic)
        ));
        assert!(matches!(
            parse_pnm(b"P2\n2 2\n100\n0 0 0 0"),
            Err(PnmError::UnsupportedMaxval { got: 100 })
        ));
        assert!(matches!(
            parse_pnm(b"P2\n2 2\n255\n0 0 0"),
            Err(PnmError::TruncatedData)
        ));
        let mut p5 = b"P5\n2 2\n255\n".to_vec();
        p5.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(parse_pnm(&p5), Err(PnmError::TruncatedData)));
        assert!(matches!(
            parse_pnm(b"P2\n0 2\n255\n"),
            Err(PnmError::BadHeader { .. })
        ));
        assert!(matches!(
            parse_pnm(b"P2\n2 2\n255\n0 0 0 300"),
            Err(PnmError::BadHeader { .. })
        ));
        assert!(matches!(
            parse_pnm(b"P2\nx 2\n255\n0 0"),
            Err(PnmError::BadHeader { .. })
        ));
    }

    #[test]
    fn quantized_values_round_trip_exactly() {
        let vals: Vec<f64> = (0..12).map(|i| (i * 21 % 256) as f64 / 255.0).collect();
        let img = gray(&vals, 3, 4);
        for opts in [
            PnmWriteOptions::default(),
            PnmWriteOptions {
                binary: false,
                sixteen_bit: false,
            },
        ] {
            let back = parse_pnm(&encode_pnm(&img, opts)).unwrap();
            assert_eq!(back.samples(), img.samples(), "{opts:?}");
        }
    }

    #[test]
    fn round_trip_error_is_bounded_by_quantization() {
        let mut rng = SplitMix64::new(77);
        let vals: Vec<f64> = (0..48).map(|_| rng.next_f64()).collect();
        let img = RasterImage::new(3, 4, 4, vals).unwrap();
        for (opts, bound) in [
            (
                PnmWriteOptions {
                    binary: true,
                    sixteen_bit: false,
                },
                0.5 / 255.0 + 1e-12,
            ),
            (
                PnmWriteOptions {
                    binary: true,
                    sixteen_bit: true,
                },
                0.5 / 65535.0 + 1e-12,
            ),
            (
                PnmWriteOptions {
                    binary: false,
                    sixteen_bit: true,
                },
                0.5 / 65535.0 + 1e-12,
            ),
        ] {
            let back = parse_pnm(&encode_pnm(&img, opts)).unwrap();
            for (a, b) in back.samples().iter().zip(img.samples()) {
                assert!((a - b).abs() <= bound, "{opts:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ascii_lines_stay_short() {
        let vals = vec![1.0; 400];
        let img = gray(&vals, 20, 20);
        let text = encode_pnm(
            &img,
            PnmWriteOptions {
                binary: false,
                sixteen_bit: true,
            },
        );
        for line in text.split(|&b| b == b'\n') {
            assert!(line.len() <= 70, "line length {}", line.len());
        }
    }

    #[test]
    fn sharpen_overshoot_clamps_at_save() {
        let stack = ChannelStack::new(1, 1, 3, vec![-0.25, 0.5, 1.5]).unwrap();
        let img = RasterImage::from_stack_clamped(&stack).unwrap();
        assert_eq!(img.samples(), &[0.0, 0.5, 1.0]);
        let bytes = encode_pnm(&img, PnmWriteOptions::default());
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);

        let bad = ChannelStack::new(2, 1, 1, vec![0.0, 0.0]).unwrap();
        assert!(RasterImage::from_stack_clamped(&bad).is_err());
    }

    #[test]
    fn psnr_known_values() {
        let a = gray(&[0.0, 0.0, 0.0, 0.0], 2, 2);
        let b = gray(&[0.5, 0.5, 0.5, 0.5], 2, 2);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 10.0 * 4.0f64.log10()).abs() < 1e-12);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        let c = gray(&[0.0; 6], 2, 3);
        assert!(matches!(psnr(&a, &c), Err(TvError::ShapeMismatch { .. })));
    }

    #[test]
    fn noise_is_seeded_and_clamped() {
        let img = gray(&vec![0.5; 64], 8, 8);
        let n1 = add_gaussian_noise(&img, 0.2, 9);
        let n2 = add_gaussian_noise(&img, 0.2, 9);
        assert_eq!(n1.samples(), n2.samples());
        let n3 = add_gaussian_noise(&img, 0.2, 10);
        assert_ne!(n1.samples(), n3.samples());
        assert!(n1.samples().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(n1.samples().iter().any(|v| (v - 0.5).abs() > 1e-3));

        let clean = add_gaussian_noise(&img, 0.0, 7);
        assert_eq!(clean.samples(), img.samples());
    }

    #[test]
    fn stack_round_trip() {
        let img = gray(&[0.1, 0.2, 0.3, 0.4], 2, 2);
        let stack = img.to_stack();
        let back = RasterImage::from_stack_clamped(&stack).unwrap();
        assert_eq!(back, img);
    }
}

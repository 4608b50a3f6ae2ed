//! RGB float images and binary PPM (P6) I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Background gray level. Chosen to be exactly representable in 8 bits so a
/// PPM round trip leaves rendered images unchanged.
pub const BACKGROUND_GRAY: f64 = 128.0 / 255.0;

/// Row-major RGB image with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image channel values must lie in [0, 1]"));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }

    /// Copies the `w`×`h` window whose top-left corner is (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    /// Area-averaging downsample. Each output cell averages the source pixels
    /// in `[floor(i*W/w), floor((i+1)*W/w))` along each axis.
    pub fn downsample(&self, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || w > self.width || h > self.height {
            return Err(Error::invalid(format!(
                "cannot downsample {}x{} to {w}x{h}",
                self.width, self.height
            )));
        }
        if w == self.width && h == self.height {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for j in 0..h {
            let y0 = j * self.height / h;
            let y1 = (j + 1) * self.height / h;
            for i in 0..w {
                let x0 = i * self.width / w;
                let x1 = (i + 1) * self.width / w;
                let mut acc = [0.0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = self.pixel(x, y);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                data.extend(acc.iter().map(|a| a / n));
            }
        }
        Ok(Image {
            width: w,
            height: h,
            data,
        })
    }

    /// Standard deviation over every channel value.
    pub fn std_dev(&self) -> f64 {
        let n = self.data.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mean = self.data.iter().sum::<f64>() / n;
        (self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_ppm(std::io::BufWriter::new(file))
    }

    pub fn read_ppm<R: Read>(input: R, origin: &Path) -> Result<Image> {
        let mut reader = BufReader::new(input);
        let mut header = Vec::new();
        // magic, width, height, maxval, separated by whitespace and comments
        while header.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::format(origin, "truncated PPM header"));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P6" {
            return Err(Error::format(origin, "not a binary PPM (P6)"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(origin, format!("bad PPM header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(Error::format(origin, "only 8-bit PPM is supported"));
        }
        let mut bytes = vec![0u8; width * height * 3];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| Error::format(origin, "truncated PPM pixel data"))?;
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn load_ppm(path: &Path) -> Result<Image> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Image::read_ppm(std::fs::File::open(path)?, path)
    }
}

//! Y4M (subset) and raw planar YUV420 readers, plus a Y4M writer for
//! reconstructions. 8-bit 4:2:0 only.

use crate::error::{Error, Result};

/// Planar 4:2:0, 8-bit raw video.
#[derive(Debug, Clone)]
pub struct RawVideo {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<YuvFrame>,
}

#[derive(Debug, Clone)]
pub struct YuvFrame {
    pub y: Vec<u8>,
    pub cb: Vec<u8>,
    pub cr: Vec<u8>,
}

impl RawVideo {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

fn plane_sizes(width: usize, height: usize) -> (usize, usize) {
    (width * height, (width / 2) * (height / 2))
}

/// Parse a Y4M stream. Supported colorspace tags: C420 and its chroma-siting
/// variants (all 8-bit 4:2:0); a missing tag defaults to C420.
pub fn read_y4m(bytes: &[u8]) -> Result<RawVideo> {
    const MAGIC: &[u8] = b"YUV4MPEG2";
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing newline after stream header".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::MalformedHeader("non-UTF8 stream header".into()))?;
    if !header.as_bytes().starts_with(MAGIC) {
        return Err(Error::MalformedHeader("missing YUV4MPEG2 signature".into()));
    }
    let mut width = 0usize;
    let mut height = 0usize;
    for token in header.split_ascii_whitespace().skip(1) {
        let (tag, value) = token.split_at(1);
        match tag {
            "W" => {
                width = value
                    .parse()
                    .map_err(|_| Error::MalformedHeader(token.into()))?
            }
            "H" => {
                height = value
                    .parse()
                    .map_err(|_| Error::MalformedHeader(token.into()))?
            }
            "C" => {
                let ok = matches!(value, "420" | "420jpeg" | "420mpeg2" | "420paldv");
                if !ok {
                    return Err(Error::UnsupportedPixelFormat(format!("C{}", value)));
                }
            }
            // frame rate, interlacing, aspect and extensions are ignored
            "F" | "I" | "A" | "X" => {}
            _ => return Err(Error::MalformedHeader(token.into())),
        }
    }
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(Error::MalformedHeader(format!(
            "bad dimensions {}x{}",
            width, height
        )));
    }

    let (y_size, c_size) = plane_sizes(width, height);
    let mut frames = Vec::new();
    let mut pos = nl + 1;
    while pos < bytes.len() {
        let index = frames.len();
        // FRAME marker line, parameters ignored
        let rest = &bytes[pos..];
        if !rest.starts_with(b"FRAME") {
            return Err(Error::MalformedHeader(format!(
                "expected FRAME marker for frame {}",
                index
            )));
        }
        let fnl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(Error::TruncatedFrame(index))?;
        let data_start = pos + fnl + 1;
        let data_end = data_start + y_size + 2 * c_size;
        if data_end > bytes.len() {
            return Err(Error::TruncatedFrame(index));
        }
        let y = bytes[data_start..data_start + y_size].to_vec();
        let cb = bytes[data_start + y_size..data_start + y_size + c_size].to_vec();
        let cr = bytes[data_start + y_size + c_size..data_end].to_vec();
        frames.push(YuvFrame { y, cb, cr });
        pos = data_end;
    }
    Ok(RawVideo {
        width,
        height,
        frames,
    })
}

/// Read headerless planar YUV420 with externally supplied geometry.
/// `frame_limit` of `None` takes every whole frame in the buffer.
pub fn read_yuv420(
    bytes: &[u8],
    width: usize,
    height: usize,
    frame_limit: Option<usize>,
) -> Result<RawVideo> {
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(Error::MalformedHeader(format!(
            "bad dimensions {}x{}",
            width, height
        )));
    }
    let (y_size, c_size) = plane_sizes(width, height);
    let frame_size = y_size + 2 * c_size;
    let available = bytes.len() / frame_size;
    let count = frame_limit.unwrap_or(available);
    if count > available {
        return Err(Error::TruncatedFrame(available));
    }
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let base = i * frame_size;
        frames.push(YuvFrame {
            y: bytes[base..base + y_size].to_vec(),
            cb: bytes[base + y_size..base + y_size + c_size].to_vec(),
            cr: bytes[base + y_size + c_size..base + frame_size].to_vec(),
        });
    }
    Ok(RawVideo {
        width,
        height,
        frames,
    })
}

pub fn write_y4m(video: &RawVideo) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "YUV4MPEG2 W{} H{} F30:1 Ip A1:1 C420\n",
            video.width, video.height
        )
        .as_bytes(),
    );
    for f in &video.frames {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(&f.y);
        out.extend_from_slice(&f.cb);
        out.extend_from_slice(&f.cr);
    }
    out
}

//! File formats: PFM float maps, binary PPM, the ASCII scene format and the
//! Adam state sidecar.
//!
//! Every file operation bumps a process-wide counter; the raster benchmark
//! reads it to prove its timed region performs no I/O.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::FormatError;
use crate::field::{self, GaussianField, GaussianPrimitive};
use crate::image::Image;
use crate::optim::AdamState;

static IO_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn io_call_count() -> u64 {
    IO_CALLS.load(Ordering::SeqCst)
}

pub const SCENE_MAGIC: &str = "g2t-scene";
pub const SCENE_VERSION: &str = "v1";
pub const ADAM_MAGIC: &[u8; 8] = b"G2TADAM1";

fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    IO_CALLS.fetch_add(1, Ordering::SeqCst);
    fs::read(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    IO_CALLS.fetch_add(1, Ordering::SeqCst);
    fs::write(path, bytes).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

pub fn create_dir(path: &Path) -> Result<(), FormatError> {
    IO_CALLS.fetch_add(1, Ordering::SeqCst);
    fs::create_dir_all(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| FormatError::Malformed {
        kind: "text",
        offset: e.utf8_error().valid_up_to(),
        msg: "invalid utf-8".into(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    write_bytes(path, text.as_bytes())
}

/// Cursor over a netpbm-style header: whitespace separated tokens, `#` comments.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self, comments: bool) -> Result<(usize, &'a str), FormatError> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if comments && self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FormatError::Malformed { kind: self.kind, offset: start, msg: "unexpected end of header".into() });
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| FormatError::Malformed { kind: self.kind, offset: start, msg: "non-ascii header token".into() })?;
        Ok((start, tok))
    }

    fn number<N: std::str::FromStr>(&mut self, what: &str, comments: bool) -> Result<N, FormatError> {
        let (off, tok) = self.token(comments)?;
        tok.parse()
            .map_err(|_| FormatError::Malformed { kind: self.kind, offset: off, msg: format!("bad {what} '{tok}'") })
    }

    /// Consumes the single whitespace byte that separates header and payload.
    fn end_header(&mut self) -> Result<usize, FormatError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(FormatError::Malformed { kind: self.kind, offset: self.pos, msg: "missing header terminator".into() }),
        }
    }
}

/// Parses a PFM byte stream into a top-to-bottom image.
pub fn decode_pfm(bytes: &[u8]) -> Result<Image, FormatError> {
    let mut cur = HeaderCursor { bytes, pos: 0, kind: "PFM" };
    let (off, magic) = cur.token(false)?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(FormatError::Unsupported { kind: "PFM", msg: format!("magic '{other}' at byte {off}") });
        }
    };
    let width: usize = cur.number("width", false)?;
    let height: usize = cur.number("height", false)?;
    let scale_off = cur.pos;
    let scale: f64 = cur.number("scale", false)?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::Malformed { kind: "PFM", offset: scale_off, msg: "scale must be non-zero".into() });
    }
    let little = scale < 0.0;
    let start = cur.end_header()?;
    let n = width * height * channels;
    let payload = &bytes[start..];
    if payload.len() < 4 * n {
        return Err(FormatError::Truncated { kind: "PFM", offset: start, expected: 4 * n, found: payload.len() });
    }
    let mut data = vec![0.0; n];
    let row = width * channels;
    for (k, chunk) in payload[..4 * n].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        // stored bottom-to-top
        let (r, c) = (k / row, k % row);
        data[(height - 1 - r) * row + c] = v as f64;
    }
    Ok(Image::from_data(width, height, channels, data))
}

/// Little-endian PFM (`Pf` for one channel, `PF` for three), rows bottom-to-top.
pub fn encode_pfm(img: &Image) -> Result<Vec<u8>, FormatError> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(FormatError::Unsupported { kind: "PFM", msg: format!("{c} channels") }),
    };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for r in (0..img.height).rev() {
        for v in &img.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: &Path) -> Result<Image, FormatError> {
    decode_pfm(&read_bytes(path)?)
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<(), FormatError> {
    write_bytes(path, &encode_pfm(img)?)
}

/// Binary PPM (P6). Returns values scaled to [0, 1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Image, FormatError> {
    let mut cur = HeaderCursor { bytes, pos: 0, kind: "PPM" };
    let (off, magic) = cur.token(true)?;
    if magic != "P6" {
        return Err(FormatError::Unsupported { kind: "PPM", msg: format!("magic '{magic}' at byte {off}") });
    }
    let width: usize = cur.number("width", true)?;
    let height: usize = cur.number("height", true)?;
    let max_off = cur.pos;
    let maxval: u32 = cur.number("maxval", true)?;
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::Malformed { kind: "PPM", offset: max_off, msg: format!("maxval {maxval} out of range") });
    }
    let start = cur.end_header()?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = width * height * 3;
    let payload = &bytes[start..];
    if payload.len() < bps * n {
        return Err(FormatError::Truncated { kind: "PPM", offset: start, expected: bps * n, found: payload.len() });
    }
    let data = (0..n)
        .map(|k| {
            let v = if bps == 1 { payload[k] as u32 } else { u16::from_be_bytes([payload[2 * k], payload[2 * k + 1]]) as u32 };
            v as f64 / maxval as f64
        })
        .collect();
    Ok(Image::from_data(width, height, 3, data))
}

/// Quantizes a value in [0, 1] to 8 bits: clamp, scale, round half to even.
pub fn quantize_u8(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round_ties_even() as u8
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>, FormatError> {
    if img.channels != 3 {
        return Err(FormatError::Unsupported { kind: "PPM", msg: format!("{} channels", img.channels) });
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize_u8(v)));
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Image, FormatError> {
    decode_ppm(&read_bytes(path)?)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<(), FormatError> {
    write_bytes(path, &encode_ppm(img)?)
}

/// One primitive per line, fields in storage order, 17 significant digits.
pub fn encode_scene(field: &GaussianField) -> String {
    let degree = field.sh_degree;
    let stride = field::prim_stride(degree);
    let mut s = format!("{SCENE_MAGIC} {SCENE_VERSION} {} {}\n", field.len(), degree);
    s.push_str(&format!(
        "# step {}\n# center(3) log_scale(3) rotation(4) opacity_logit sh({}x3) velocity(3) rotor_rate(3) t_center t_sigma\n",
        field.step,
        field::sh_len(degree)
    ));
    let mut buf = vec![0.0; stride];
    for p in &field.primitives {
        field::write_prim_slice(p, degree, &mut buf);
        let line: Vec<String> = buf.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn decode_scene(text: &str) -> Result<GaussianField, FormatError> {
    let malformed = |offset: usize, msg: String| FormatError::Malformed { kind: "scene", offset, msg };
    let mut offset = 0;
    let mut header: Option<(usize, u32)> = None;
    let mut step = 0u64;
    let mut prims: Vec<GaussianPrimitive> = Vec::new();
    for line in text.split_inclusive('\n') {
        let line_off = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        if let Some(comment) = body.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("step ") {
                step = v.trim().parse().map_err(|_| malformed(line_off, format!("bad step '{v}'")))?;
            }
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        match header {
            None => {
                if toks.len() != 4 || toks[0] != SCENE_MAGIC {
                    return Err(malformed(line_off, format!("expected '{SCENE_MAGIC} v1 <count> <sh_degree>', got '{body}'")));
                }
                if toks[1] != SCENE_VERSION {
                    return Err(FormatError::Unsupported { kind: "scene", msg: format!("version '{}'", toks[1]) });
                }
                let count = toks[2].parse().map_err(|_| malformed(line_off, format!("bad count '{}'", toks[2])))?;
                let degree: u32 = toks[3].parse().map_err(|_| malformed(line_off, format!("bad degree '{}'", toks[3])))?;
                if degree > 1 {
                    return Err(FormatError::Unsupported { kind: "scene", msg: format!("SH degree {degree}") });
                }
                header = Some((count, degree));
            }
            Some((_, degree)) => {
                let stride = field::prim_stride(degree);
                if toks.len() != stride {
                    return Err(malformed(line_off, format!("expected {stride} fields, found {}", toks.len())));
                }
                let vals = toks
                    .iter()
                    .map(|t| t.parse::<f64>().map_err(|_| malformed(line_off, format!("bad number '{t}'"))))
                    .collect::<Result<Vec<f64>, _>>()?;
                prims.push(field::read_prim_slice(&vals, degree));
            }
        }
    }
    let (count, degree) = header.ok_or_else(|| malformed(0, "missing header".into()))?;
    if prims.len() != count {
        return Err(FormatError::Truncated { kind: "scene", offset, expected: count, found: prims.len() });
    }
    Ok(GaussianField { primitives: prims, step, sh_degree: degree })
}

pub fn read_scene(path: &Path) -> Result<GaussianField, FormatError> {
    decode_scene(&read_text(path)?)
}

pub fn write_scene(path: &Path, field: &GaussianField) -> Result<(), FormatError> {
    write_text(path, &encode_scene(field))
}

/// Magic, then little-endian f64: step, lr, beta1, beta2, eps, n, m[n], v[n].
pub fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = ADAM_MAGIC.to_vec();
    let head = [state.step_count as f64, state.lr, state.beta1, state.beta2, state.eps, state.m.len() as f64];
    for v in head.iter().chain(&state.m).chain(&state.v) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_adam(bytes: &[u8]) -> Result<AdamState, FormatError> {
    if bytes.len() < 8 || &bytes[..8] != ADAM_MAGIC {
        return Err(FormatError::Malformed { kind: "adam state", offset: 0, msg: "bad magic".into() });
    }
    let body = &bytes[8..];
    if !body.len().is_multiple_of(8) || body.len() < 48 {
        return Err(FormatError::Truncated { kind: "adam state", offset: 8, expected: 48, found: body.len() });
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let n = vals[5] as usize;
    if vals.len() != 6 + 2 * n {
        return Err(FormatError::Truncated { kind: "adam state", offset: 56, expected: 8 * (6 + 2 * n), found: 8 * vals.len() });
    }
    Ok(AdamState {
        m: vals[6..6 + n].to_vec(),
        v: vals[6 + n..].to_vec(),
        step_count: vals[0] as u64,
        lr: vals[1],
        beta1: vals[2],
        beta2: vals[3],
        eps: vals[4],
    })
}

pub fn read_adam(path: &Path) -> Result<AdamState, FormatError> {
    decode_adam(&read_bytes(path)?)
}

pub fn write_adam(path: &Path, state: &AdamState) -> Result<(), FormatError> {
    write_bytes(path, &encode_adam(state))
}

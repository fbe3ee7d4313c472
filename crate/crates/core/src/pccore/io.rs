//! Cloud file formats.
//!
//! - `xyz_text`: whitespace separated `x y z [intensity] [label]` per line,
//!   `#` starts a comment. A `# columns: x y z label` comment overrides the
//!   column-count inference, which otherwise reads 4 columns as intensity.
//! - `ply_ascii`: PLY header with `x y z` float properties, optional
//!   `scalar_intensity` float and `label` uchar on the vertex element.
//! - `kpc_binary`: magic `KPC1`, flags `u8` (bit0 intensity, bit1 labels),
//!   point count `u64`, then per point `3 x f32` coordinates, optional `f32`
//!   intensity and optional `u8` label. All little-endian.
//!
//! Text formats write 9 significant digits. The binary format stores `f32`,
//! so it round-trips exactly any cloud whose values are `f32`-representable.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::cloud::{ClassId, LabeledCloud, Point3};
use crate::{Error, Result};

pub const KPC_MAGIC: &[u8; 4] = b"KPC1";
const FLAG_INTENSITY: u8 = 1;
const FLAG_LABELS: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    KpcBinary,
    XyzText,
}

impl CloudFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<CloudFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(CloudFormat::PlyAscii),
            "kpc" => Some(CloudFormat::KpcBinary),
            "xyz" | "txt" => Some(CloudFormat::XyzText),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::PlyAscii => "ply",
            CloudFormat::KpcBinary => "kpc",
            CloudFormat::XyzText => "xyz",
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply_ascii" | "ply" => Ok(CloudFormat::PlyAscii),
            "kpc_binary" | "kpc" => Ok(CloudFormat::KpcBinary),
            "xyz_text" | "xyz" => Ok(CloudFormat::XyzText),
            other => Err(Error::Argument(format!("unknown cloud format '{other}'"))),
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<LabeledCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::KpcBinary => decode_kpc(&bytes),
        CloudFormat::PlyAscii => parse_ply(as_text(&bytes)?),
        CloudFormat::XyzText => parse_xyz(as_text(&bytes)?),
    }
}

pub fn save_cloud(cloud: &LabeledCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    cloud.validate()?;
    let bytes = match format {
        CloudFormat::KpcBinary => encode_kpc(cloud),
        CloudFormat::PlyAscii => write_ply(cloud).into_bytes(),
        CloudFormat::XyzText => write_xyz(cloud).into_bytes(),
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn as_text(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| {
        Error::parse(
            format!("byte {}", e.valid_up_to()),
            "file is not valid UTF-8",
        )
    })
}

/// Formats with 9 significant digits, trailing zeros trimmed.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn check_point(p: &Point3, location: impl FnOnce() -> String) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "non-finite coordinate at {}",
            location()
        )))
    }
}

fn parse_label(tok: &str, line: usize) -> Result<u8> {
    let v: u8 = tok
        .parse()
        .map_err(|_| Error::parse(format!("line {line}"), format!("invalid label '{tok}'")))?;
    if !ClassId(v).is_valid() {
        return Err(Error::parse(
            format!("line {line}"),
            format!("label {v} outside 0..5 and 255"),
        ));
    }
    Ok(v)
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::parse(format!("line {line}"), format!("invalid number '{tok}'")))
}

// ---------------------------------------------------------------- xyz text

#[derive(Clone, Copy, PartialEq, Eq)]
struct Columns {
    intensity: bool,
    labels: bool,
}

impl Columns {
    fn count(self) -> usize {
        3 + self.intensity as usize + self.labels as usize
    }
}

fn parse_xyz(text: &str) -> Result<LabeledCloud> {
    let mut declared: Option<Columns> = None;
    let mut columns: Option<Columns> = None;
    let mut coords = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let (content, comment) = match raw.find('#') {
            Some(pos) => (&raw[..pos], Some(&raw[pos + 1..])),
            None => (raw, None),
        };
        if let Some(spec) = comment.and_then(|c| c.trim().strip_prefix("columns:")) {
            let names: Vec<&str> = spec.split_whitespace().collect();
            if names.len() < 3 || names[..3] != ["x", "y", "z"] {
                return Err(Error::parse(
                    format!("line {line_no}"),
                    "column declaration must start with x y z",
                ));
            }
            let mut cols = Columns {
                intensity: false,
                labels: false,
            };
            for name in &names[3..] {
                match *name {
                    "intensity" => cols.intensity = true,
                    "label" => cols.labels = true,
                    other => {
                        return Err(Error::parse(
                            format!("line {line_no}"),
                            format!("unknown column '{other}'"),
                        ))
                    }
                }
            }
            declared = Some(cols);
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let cols = match columns {
            Some(c) => c,
            None => {
                let c = match declared {
                    Some(c) => c,
                    None => match toks.len() {
                        3 => Columns {
                            intensity: false,
                            labels: false,
                        },
                        4 => Columns {
                            intensity: true,
                            labels: false,
                        },
                        5 => Columns {
                            intensity: true,
                            labels: true,
                        },
                        n => {
                            return Err(Error::parse(
                                format!("line {line_no}"),
                                format!("expected 3 to 5 columns, found {n}"),
                            ))
                        }
                    },
                };
                columns = Some(c);
                c
            }
        };
        if toks.len() != cols.count() {
            return Err(Error::parse(
                format!("line {line_no}"),
                format!("expected {} columns, found {}", cols.count(), toks.len()),
            ));
        }
        let p = [
            parse_f64(toks[0], line_no)?,
            parse_f64(toks[1], line_no)?,
            parse_f64(toks[2], line_no)?,
        ];
        check_point(&p, || format!("line {line_no}"))?;
        coords.push(p);
        let mut next = 3;
        if cols.intensity {
            intensity.push(parse_f64(toks[next], line_no)?);
            next += 1;
        }
        if cols.labels {
            labels.push(parse_label(toks[next], line_no)?);
        }
    }
    let cols = columns.or(declared).unwrap_or(Columns {
        intensity: false,
        labels: false,
    });
    Ok(LabeledCloud {
        coords,
        intensity: cols.intensity.then_some(intensity),
        labels: cols.labels.then_some(labels),
    })
}

fn write_xyz(cloud: &LabeledCloud) -> String {
    let mut out = String::from("# columns: x y z");
    if cloud.intensity.is_some() {
        out.push_str(" intensity");
    }
    if cloud.labels.is_some() {
        out.push_str(" label");
    }
    out.push('\n');
    for (i, p) in cloud.coords.iter().enumerate() {
        out.push_str(&format!(
            "{} {} {}",
            fmt_sig9(p[0]),
            fmt_sig9(p[1]),
            fmt_sig9(p[2])
        ));
        if let Some(v) = &cloud.intensity {
            out.push(' ');
            out.push_str(&fmt_sig9(v[i]));
        }
        if let Some(v) = &cloud.labels {
            out.push_str(&format!(" {}", v[i]));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- PLY ascii

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

fn parse_ply(text: &str) -> Result<LabeledCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse("line 1", "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(Error::parse("end of file", "missing end_header"));
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(Error::parse(
                        format!("line {n}"),
                        format!("unsupported PLY format '{}'", toks[1..].join(" ")),
                    ));
                }
                saw_format = true;
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(Error::parse(format!("line {n}"), "malformed element line"));
                }
                let count = toks[2].parse().map_err(|_| {
                    Error::parse(
                        format!("line {n}"),
                        format!("invalid element count '{}'", toks[2]),
                    )
                })?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| {
                    Error::parse(format!("line {n}"), "property before any element")
                })?;
                match toks.get(1) {
                    Some(&"list") if toks.len() == 5 => {
                        el.has_list = true;
                        el.properties.push(toks[4].to_string());
                    }
                    Some(_) if toks.len() == 3 => el.properties.push(toks[2].to_string()),
                    _ => return Err(Error::parse(format!("line {n}"), "malformed property line")),
                }
            }
            Some(other) => {
                return Err(Error::parse(
                    format!("line {n}"),
                    format!("unknown header keyword '{other}'"),
                ))
            }
        }
    }
    if !saw_format {
        return Err(Error::parse("header", "missing format line"));
    }

    let mut cloud = LabeledCloud::default();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines.next().ok_or_else(|| {
                    Error::parse("end of file", format!("truncated '{}' element", el.name))
                })?;
            }
            continue;
        }
        if el.has_list {
            return Err(Error::parse(
                "header",
                "list properties on vertex are not supported",
            ));
        }
        let find = |names: &[&str]| {
            el.properties
                .iter()
                .position(|p| names.contains(&p.as_str()))
        };
        let (Some(ix), Some(iy), Some(iz)) = (find(&["x"]), find(&["y"]), find(&["z"])) else {
            return Err(Error::parse("header", "vertex element lacks x, y, z"));
        };
        let ii = find(&["scalar_intensity", "intensity"]);
        let il = find(&["label", "scalar_label", "class"]);
        let mut intensity = ii.map(|_| Vec::with_capacity(el.count));
        let mut labels = il.map(|_| Vec::with_capacity(el.count));
        cloud.coords.reserve(el.count);
        for _ in 0..el.count {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse("end of file", "truncated vertex data"))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != el.properties.len() {
                return Err(Error::parse(
                    format!("line {n}"),
                    format!(
                        "expected {} values, found {}",
                        el.properties.len(),
                        toks.len()
                    ),
                ));
            }
            let p = [
                parse_f64(toks[ix], n)?,
                parse_f64(toks[iy], n)?,
                parse_f64(toks[iz], n)?,
            ];
            check_point(&p, || format!("line {n}"))?;
            cloud.coords.push(p);
            if let (Some(v), Some(i)) = (intensity.as_mut(), ii) {
                v.push(parse_f64(toks[i], n)?);
            }
            if let (Some(v), Some(i)) = (labels.as_mut(), il) {
                v.push(parse_label(toks[i], n)?);
            }
        }
        cloud.intensity = intensity;
        cloud.labels = labels;
    }
    Ok(cloud)
}

fn write_ply(cloud: &LabeledCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\ncomment kpseg point cloud\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.intensity.is_some() {
        out.push_str("property float scalar_intensity\n");
    }
    if cloud.labels.is_some() {
        out.push_str("property uchar label\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.coords.iter().enumerate() {
        out.push_str(&format!(
            "{} {} {}",
            fmt_sig9(p[0]),
            fmt_sig9(p[1]),
            fmt_sig9(p[2])
        ));
        if let Some(v) = &cloud.intensity {
            out.push(' ');
            out.push_str(&fmt_sig9(v[i]));
        }
        if let Some(v) = &cloud.labels {
            out.push_str(&format!(" {}", v[i]));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- kpc binary

pub fn encode_kpc(cloud: &LabeledCloud) -> Vec<u8> {
    let mut flags = 0u8;
    if cloud.intensity.is_some() {
        flags |= FLAG_INTENSITY;
    }
    if cloud.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    let mut out = Vec::with_capacity(13 + cloud.len() * record_size(flags));
    out.extend_from_slice(KPC_MAGIC);
    out.push(flags);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for (i, p) in cloud.coords.iter().enumerate() {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(v) = &cloud.intensity {
            out.extend_from_slice(&(v[i] as f32).to_le_bytes());
        }
        if let Some(v) = &cloud.labels {
            out.push(v[i]);
        }
    }
    out
}

fn record_size(flags: u8) -> usize {
    12 + if flags & FLAG_INTENSITY != 0 { 4 } else { 0 }
        + if flags & FLAG_LABELS != 0 { 1 } else { 0 }
}

pub fn decode_kpc(bytes: &[u8]) -> Result<LabeledCloud> {
    if bytes.len() < 13 {
        return Err(Error::parse(
            format!("offset {}", bytes.len()),
            "truncated kpc header",
        ));
    }
    if &bytes[..4] != KPC_MAGIC {
        return Err(Error::parse("offset 0", "bad magic, expected KPC1"));
    }
    let flags = bytes[4];
    if flags & !(FLAG_INTENSITY | FLAG_LABELS) != 0 {
        return Err(Error::parse(
            "offset 4",
            format!("unknown flag bits {flags:#04x}"),
        ));
    }
    let n = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let rec = record_size(flags);
    let expected = (n as u128) * (rec as u128) + 13;
    if expected != bytes.len() as u128 {
        return Err(Error::parse(
            format!("offset {}", bytes.len().min(expected as usize)),
            format!(
                "expected {expected} bytes for {n} points, file has {}",
                bytes.len()
            ),
        ));
    }
    let n = n as usize;
    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
    let mut coords = Vec::with_capacity(n);
    let mut intensity = (flags & FLAG_INTENSITY != 0).then(|| Vec::with_capacity(n));
    let mut labels = (flags & FLAG_LABELS != 0).then(|| Vec::with_capacity(n));
    for i in 0..n {
        let off = 13 + i * rec;
        let p = [f32_at(off), f32_at(off + 4), f32_at(off + 8)];
        check_point(&p, || format!("offset {off}"))?;
        coords.push(p);
        let mut cur = off + 12;
        if let Some(v) = intensity.as_mut() {
            v.push(f32_at(cur));
            cur += 4;
        }
        if let Some(v) = labels.as_mut() {
            let l = bytes[cur];
            if !ClassId(l).is_valid() {
                return Err(Error::parse(
                    format!("offset {cur}"),
                    format!("label {l} outside 0..5 and 255"),
                ));
            }
            v.push(l);
        }
    }
    Ok(LabeledCloud {
        coords,
        intensity,
        labels,
    })
}

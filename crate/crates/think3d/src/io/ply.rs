//! PLY point clouds: ASCII and binary little-endian, vertex element with
//! `x y z red green blue [confidence]`.

use std::fmt::Write as _;

use thiserror::Error;
use think3d_core::pointcloud::ColoredPoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlyError {
    #[error("byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("byte {offset}: vertex element is missing required property '{name}'")]
    MissingProperty { offset: usize, name: String },
    #[error("unsupported PLY format '{0}'")]
    UnsupportedFormat(String),
}

fn malformed(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::Malformed { offset, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

/// A decoded scalar, kept exact for the common float32 case.
#[derive(Debug, Clone, Copy)]
enum Value {
    F32(f32),
    Other(f64),
}

impl Value {
    fn as_f32(self) -> f32 {
        match self {
            Value::F32(v) => v,
            Value::Other(v) => v as f32,
        }
    }
    fn as_f64(self) -> f64 {
        match self {
            Value::F32(v) => v as f64,
            Value::Other(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub points: Vec<ColoredPoint>,
    pub comments: Vec<String>,
    pub format: PlyFormat,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    comments: Vec<String>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(malformed(offset, "header not terminated by end_header"));
        };
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| malformed(offset, "header is not UTF-8"))?;
        let line = line.trim_end_matches('\r');
        let line_start = offset;
        offset += nl + 1;
        if first {
            if line != "ply" {
                return Err(malformed(0, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(PlyError::UnsupportedFormat(other.to_string())),
                    None => return Err(malformed(line_start, "format line without a format")),
                });
            }
            Some("comment") => comments.push(line.strip_prefix("comment").unwrap_or("").trim().to_string()),
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| malformed(line_start, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed(line_start, format!("element '{name}' has no valid count")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| malformed(line_start, "property before any element"))?;
                let ty = words.next().ok_or_else(|| malformed(line_start, "property without a type"))?;
                let kind = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if !count.is_float() => PropKind::List { count, item },
                        _ => return Err(malformed(line_start, "bad list property types")),
                    }
                } else {
                    PropKind::Scalar(Scalar::parse(ty).ok_or_else(|| malformed(line_start, format!("unknown property type '{ty}'")))?)
                };
                let name = words.next().ok_or_else(|| malformed(line_start, "property without a name"))?;
                el.props.push(Property { name: name.to_string(), kind });
            }
            Some("end_header") => break,
            Some(other) => return Err(malformed(line_start, format!("unexpected header keyword '{other}'"))),
            None => {}
        }
    }
    let format = format.ok_or_else(|| malformed(0, "missing format line"))?;
    Ok(Header { format, elements, comments, body_start: offset })
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: [usize; 3],
    confidence: Option<usize>,
}

fn vertex_layout(el: &Element, header_end: usize) -> Result<VertexLayout, PlyError> {
    let find = |name: &str| -> Result<usize, PlyError> {
        el.props
            .iter()
            .position(|p| p.name == name && matches!(p.kind, PropKind::Scalar(_)))
            .ok_or_else(|| PlyError::MissingProperty { offset: header_end, name: name.to_string() })
    };
    Ok(VertexLayout {
        xyz: [find("x")?, find("y")?, find("z")?],
        rgb: [find("red")?, find("green")?, find("blue")?],
        confidence: find("confidence").ok(),
    })
}

fn color_channel(v: Value, ty: Scalar) -> u8 {
    match ty {
        Scalar::U8 => v.as_f64() as u8,
        Scalar::U16 => (v.as_f64() / 257.0).round() as u8,
        Scalar::F32 | Scalar::F64 => (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8,
        _ => v.as_f64().clamp(0.0, 255.0) as u8,
    }
}

fn build_point(values: &[Value], el: &Element, layout: &VertexLayout) -> ColoredPoint {
    let ty = |i: usize| match el.props[i].kind {
        PropKind::Scalar(s) => s,
        PropKind::List { .. } => unreachable!("layout only indexes scalars"),
    };
    ColoredPoint {
        position: layout.xyz.map(|i| values[i].as_f32()),
        color: layout.rgb.map(|i| color_channel(values[i], ty(i))),
        confidence: layout.confidence.map_or(1.0, |i| values[i].as_f32()),
    }
}

pub fn read_ply(bytes: &[u8]) -> Result<PlyCloud, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| malformed(header.body_start, "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex_idx], header.body_start)?;
    let mut points = Vec::with_capacity(header.elements[vertex_idx].count);
    match header.format {
        PlyFormat::BinaryLittleEndian => read_binary(bytes, &header, vertex_idx, &layout, &mut points)?,
        PlyFormat::Ascii => read_ascii(bytes, &header, vertex_idx, &layout, &mut points)?,
    }
    Ok(PlyCloud { points, comments: header.comments, format: header.format })
}

fn read_scalar(bytes: &[u8], offset: &mut usize, ty: Scalar) -> Result<Value, PlyError> {
    let n = ty.size();
    let b = bytes.get(*offset..*offset + n).ok_or_else(|| malformed(*offset, "unexpected end of data"))?;
    *offset += n;
    Ok(match ty {
        Scalar::I8 => Value::Other(b[0] as i8 as f64),
        Scalar::U8 => Value::Other(b[0] as f64),
        Scalar::I16 => Value::Other(i16::from_le_bytes([b[0], b[1]]) as f64),
        Scalar::U16 => Value::Other(u16::from_le_bytes([b[0], b[1]]) as f64),
        Scalar::I32 => Value::Other(i32::from_le_bytes(b.try_into().unwrap()) as f64),
        Scalar::U32 => Value::Other(u32::from_le_bytes(b.try_into().unwrap()) as f64),
        Scalar::F32 => Value::F32(f32::from_le_bytes(b.try_into().unwrap())),
        Scalar::F64 => Value::Other(f64::from_le_bytes(b.try_into().unwrap())),
    })
}

fn read_binary(
    bytes: &[u8],
    header: &Header,
    vertex_idx: usize,
    layout: &VertexLayout,
    out: &mut Vec<ColoredPoint>,
) -> Result<(), PlyError> {
    let mut offset = header.body_start;
    let mut values = Vec::new();
    for (ei, el) in header.elements.iter().enumerate() {
        if ei > vertex_idx {
            break;
        }
        for _ in 0..el.count {
            values.clear();
            for p in &el.props {
                match p.kind {
                    PropKind::Scalar(s) => values.push(read_scalar(bytes, &mut offset, s)?),
                    PropKind::List { count, item } => {
                        let at = offset;
                        let n = read_scalar(bytes, &mut offset, count)?.as_f64();
                        if n < 0.0 {
                            return Err(malformed(at, "negative list length"));
                        }
                        let skip = n as usize * item.size();
                        if offset + skip > bytes.len() {
                            return Err(malformed(offset, "unexpected end of data"));
                        }
                        offset += skip;
                        values.push(Value::Other(n));
                    }
                }
            }
            if ei == vertex_idx {
                out.push(build_point(&values, el, layout));
            }
        }
    }
    Ok(())
}

fn read_ascii(
    bytes: &[u8],
    header: &Header,
    vertex_idx: usize,
    layout: &VertexLayout,
    out: &mut Vec<ColoredPoint>,
) -> Result<(), PlyError> {
    let mut offset = header.body_start;
    let mut values = Vec::new();
    for (ei, el) in header.elements.iter().enumerate() {
        if ei > vertex_idx {
            break;
        }
        let mut remaining = el.count;
        while remaining > 0 {
            if offset >= bytes.len() {
                return Err(malformed(offset, format!("expected {remaining} more '{}' rows", el.name)));
            }
            let rest = &bytes[offset..];
            let nl = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
            let line_start = offset;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| malformed(line_start, "row is not UTF-8"))?;
            offset += (nl + 1).min(rest.len());
            let mut toks = line.split_whitespace().peekable();
            if toks.peek().is_none() {
                continue;
            }
            values.clear();
            for p in &el.props {
                let mut next = |what: &str| -> Result<f64, PlyError> {
                    let t = toks.next().ok_or_else(|| malformed(line_start, format!("row ends before '{}'", p.name)))?;
                    t.parse::<f64>().map_err(|_| malformed(line_start, format!("bad {what} value '{t}' for '{}'", p.name)))
                };
                match p.kind {
                    PropKind::Scalar(Scalar::F32) => {
                        // parse f32 directly so shortest-repr floats round-trip exactly
                        let t = toks.next().ok_or_else(|| malformed(line_start, format!("row ends before '{}'", p.name)))?;
                        let v = t.parse::<f32>().map_err(|_| malformed(line_start, format!("bad float value '{t}' for '{}'", p.name)))?;
                        values.push(Value::F32(v));
                    }
                    PropKind::Scalar(_) => values.push(Value::Other(next("scalar")?)),
                    PropKind::List { .. } => {
                        let n = next("list length")?;
                        for _ in 0..n as usize {
                            next("list item")?;
                        }
                        values.push(Value::Other(n));
                    }
                }
            }
            if toks.next().is_some() {
                return Err(malformed(line_start, format!("extra values in '{}' row", el.name)));
            }
            if ei == vertex_idx {
                out.push(build_point(&values, el, layout));
            }
            remaining -= 1;
        }
    }
    Ok(())
}

fn header_text(format: PlyFormat, count: usize, comments: &[String]) -> String {
    let mut h = String::from("ply\n");
    h.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    for c in comments {
        let _ = writeln!(h, "comment {c}");
    }
    let _ = writeln!(h, "element vertex {count}");
    h.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property float confidence\nend_header\n",
    );
    h
}

pub fn write_ply(points: &[ColoredPoint], comments: &[String], format: PlyFormat) -> Vec<u8> {
    let mut out = header_text(format, points.len(), comments).into_bytes();
    match format {
        PlyFormat::BinaryLittleEndian => {
            out.reserve(points.len() * 19);
            for p in points {
                for c in p.position {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                out.extend_from_slice(&p.color);
                out.extend_from_slice(&p.confidence.to_le_bytes());
            }
        }
        PlyFormat::Ascii => {
            let mut s = String::new();
            for p in points {
                let [x, y, z] = p.position;
                let [r, g, b] = p.color;
                let _ = writeln!(s, "{x} {y} {z} {r} {g} {b} {}", p.confidence);
            }
            out.extend_from_slice(s.as_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ASCII3: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 1 255 0 0\n1 0 1 0 255 0\n0.5 -0.25 2 0 0 255\n";

    #[test]
    fn reads_ascii_without_confidence() {
        let c = read_ply(ASCII3.as_bytes()).unwrap();
        assert_eq!(c.points.len(), 3);
        assert_eq!(c.points[2].position, [0.5, -0.25, 2.0]);
        assert_eq!(c.points[1].color, [0, 255, 0]);
        assert!(c.points.iter().all(|p| p.confidence == 1.0));
        assert_eq!(c.comments, vec!["test".to_string()]);
    }

    #[test]
    fn missing_blue_is_named() {
        let text = ASCII3.replace("property uchar blue\n", "");
        match read_ply(text.as_bytes()) {
            Err(PlyError::MissingProperty { name, .. }) => assert_eq!(name, "blue"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let pts = vec![ColoredPoint::new([1.0, 2.0, 3.0], [1, 2, 3]); 2];
        let mut bytes = write_ply(&pts, &[], PlyFormat::BinaryLittleEndian);
        let full = bytes.len();
        bytes.truncate(full - 5);
        match read_ply(&bytes) {
            Err(PlyError::Malformed { offset, .. }) => assert_eq!(offset, full - 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn skips_extra_properties_and_face_lists() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\n\
property float nx\nproperty float red\nproperty float green\nproperty float blue\nproperty float confidence\n\
element face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3 0.5 1.0 0.5 0 0.25\n3 0 0 0\n";
        let c = read_ply(text.as_bytes()).unwrap();
        assert_eq!(c.points[0].position, [1.0, 2.0, 3.0]);
        assert_eq!(c.points[0].color, [255, 128, 0]);
        assert_eq!(c.points[0].confidence, 0.25);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_ply(b"hello\n"), Err(PlyError::Malformed { offset: 0, .. })));
        assert!(matches!(
            read_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n"),
            Err(PlyError::UnsupportedFormat(_))
        ));
        let bad = ASCII3.replace("0.5 -0.25 2", "0.5 nope 2");
        assert!(matches!(read_ply(bad.as_bytes()), Err(PlyError::Malformed { .. })));
    }

    fn arb_point() -> impl Strategy<Value = ColoredPoint> {
        (any::<[u8; 3]>(), -1e6f32..1e6, -1e6f32..1e6, -1e6f32..1e6, 0.0f32..=1.0)
            .prop_map(|(color, x, y, z, confidence)| ColoredPoint { position: [x, y, z], color, confidence })
    }

    proptest! {
        #[test]
        fn round_trips_exactly(points in proptest::collection::vec(arb_point(), 0..50), ascii in any::<bool>()) {
            let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            let bytes = write_ply(&points, &["views 2".into()], fmt);
            let back = read_ply(&bytes).unwrap();
            prop_assert_eq!(back.points, points);
            prop_assert_eq!(back.comments, vec!["views 2".to_string()]);
        }
    }
}

//! PLY point clouds and per-point fields.
//!
//! Reading accepts `ascii`, `binary_little_endian` and `binary_big_endian`
//! bodies, any scalar property types, and skips elements other than `vertex`
//! (list properties included). Writing produces ascii or little-endian binary
//! with float64 coordinates, so positions and field values round-trip
//! bit-exactly in binary mode. Ascii output uses shortest round-trip decimal
//! formatting and is lossless too.

use std::io::{BufRead, Read, Write};

use crate::geometry::Rgb;
use crate::operators::{ScalarField, TangentVectorField};
use crate::segmentation::RegionId;
use crate::Vec3;

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

impl PlyFormat {
    fn keyword(self) -> &'static str {
        match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
            PlyFormat::BinaryBigEndian => "binary_big_endian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, ScalarType::F32 | ScalarType::F64)
    }

    fn decode(self, bytes: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = bytes.try_into().expect("slice sized by ScalarType::size");
                (if big_endian { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => num!(i16),
            ScalarType::U16 => num!(u16),
            ScalarType::I32 => num!(i32),
            ScalarType::U32 => num!(u32),
            ScalarType::F32 => num!(f32),
            ScalarType::F64 => num!(f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Vertex properties of a PLY file, one column per scalar property. Every
/// supported scalar type converts to `f64` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTable {
    pub count: usize,
    pub names: Vec<String>,
    pub types: Vec<ScalarType>,
    pub columns: Vec<Vec<f64>>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    fn require(&self, name: &str) -> Result<&[f64], IoError> {
        self.column(name).ok_or_else(|| IoError::MissingProperty(name.to_string()))
    }

    fn triple(&self, a: &str, b: &str, c: &str) -> Result<Option<Vec<Vec3>>, IoError> {
        match (self.column(a), self.column(b), self.column(c)) {
            (None, None, None) => Ok(None),
            _ => {
                let (x, y, z) = (self.require(a)?, self.require(b)?, self.require(c)?);
                Ok(Some((0..self.count).map(|i| Vec3::new(x[i], y[i], z[i])).collect()))
            }
        }
    }
}

/// Point-cloud inputs as stored on disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudData {
    pub positions: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub colors: Option<Vec<Rgb>>,
    pub labels: Vec<RegionId>,
}

fn parse_error(location: String, message: impl Into<String>) -> IoError {
    IoError::Parse {
        location,
        message: message.into(),
    }
}

fn read_header(reader: &mut impl BufRead) -> Result<(PlyFormat, Vec<Element>, usize), IoError> {
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(parse_error(format!("line {}", line_no + 1), "missing end_header"));
        }
        line_no += 1;
        let at = || format!("line {line_no}");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if tokens != ["ply"] {
                return Err(parse_error(at(), "file does not start with 'ply'"));
            }
            continue;
        }
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, "1.0"] => {
                format = Some(match *kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => PlyFormat::BinaryBigEndian,
                    other => return Err(parse_error(at(), format!("unknown format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_error(at(), format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(at(), "property before any element"))?;
                let count = ScalarType::parse(count).ok_or_else(|| parse_error(at(), format!("unknown type '{count}'")))?;
                let item = ScalarType::parse(item).ok_or_else(|| parse_error(at(), format!("unknown type '{item}'")))?;
                if !count.is_integer() {
                    return Err(parse_error(at(), "list count type must be an integer"));
                }
                element.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(at(), "property before any element"))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| parse_error(at(), format!("unknown type '{ty}'")))?;
                element.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(parse_error(at(), format!("unrecognized header line '{}'", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| parse_error("header".into(), "missing format line"))?;
    Ok((format, elements, line_no))
}

fn read_ascii(reader: impl BufRead, elements: &[Element], header_lines: usize) -> Result<Option<VertexTable>, IoError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + header_lines + 1, l));
    let mut vertices = None;
    for element in elements {
        let scalar_count = element
            .properties
            .iter()
            .filter(|p| matches!(p, Property::Scalar { .. }))
            .count();
        let mut columns = vec![Vec::with_capacity(element.count); scalar_count];
        for _ in 0..element.count {
            let (line_no, line) = loop {
                match lines.next() {
                    Some((n, l)) => {
                        let l = l?;
                        if !l.trim().is_empty() {
                            break (n, l);
                        }
                    }
                    None => return Err(parse_error("end of file".into(), format!("too few '{}' rows", element.name))),
                }
            };
            let at = || format!("line {line_no}");
            let mut tokens = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64, IoError> {
                let token = tokens.next().ok_or_else(|| parse_error(at(), format!("missing value for {what}")))?;
                token
                    .parse::<f64>()
                    .map_err(|_| parse_error(at(), format!("bad number '{token}' for {what}")))
            };
            let mut column = 0;
            for property in &element.properties {
                match property {
                    Property::Scalar { name, .. } => {
                        columns[column].push(next(name)?);
                        column += 1;
                    }
                    Property::List { .. } => {
                        let n = next("list count")?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(parse_error(at(), format!("bad list count {n}")));
                        }
                        for _ in 0..n as usize {
                            next("list item")?;
                        }
                    }
                }
            }
            if tokens.next().is_some() {
                return Err(parse_error(at(), "trailing values"));
            }
        }
        if element.name == "vertex" {
            vertices = Some(table(element, columns));
        }
    }
    Ok(vertices)
}

fn read_binary(mut reader: impl Read, elements: &[Element], big_endian: bool) -> Result<Option<VertexTable>, IoError> {
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let mut offset = 0usize;
    let mut take = |size: usize| -> Result<&[u8], IoError> {
        let end = offset + size;
        if end > body.len() {
            return Err(parse_error(format!("body byte {offset}"), "unexpected end of file"));
        }
        let slice = &body[offset..end];
        offset = end;
        Ok(slice)
    };
    let mut vertices = None;
    for element in elements {
        let scalar_count = element
            .properties
            .iter()
            .filter(|p| matches!(p, Property::Scalar { .. }))
            .count();
        let mut columns = vec![Vec::with_capacity(element.count); scalar_count];
        for _ in 0..element.count {
            let mut column = 0;
            for property in &element.properties {
                match property {
                    Property::Scalar { ty, .. } => {
                        columns[column].push(ty.decode(take(ty.size())?, big_endian));
                        column += 1;
                    }
                    Property::List { count, item } => {
                        let n = count.decode(take(count.size())?, big_endian);
                        if n < 0.0 {
                            return Err(parse_error("body".into(), format!("negative list count {n}")));
                        }
                        take(n as usize * item.size())?;
                    }
                }
            }
        }
        if element.name == "vertex" {
            vertices = Some(table(element, columns));
        }
    }
    Ok(vertices)
}

fn table(element: &Element, columns: Vec<Vec<f64>>) -> VertexTable {
    let (names, types) = element
        .properties
        .iter()
        .filter_map(|p| match p {
            Property::Scalar { name, ty } => Some((name.clone(), *ty)),
            Property::List { .. } => None,
        })
        .unzip();
    VertexTable {
        count: element.count,
        names,
        types,
        columns,
    }
}

/// Parses any PLY file into its vertex property table.
pub fn read_vertex_table(reader: impl BufRead) -> Result<VertexTable, IoError> {
    let mut reader = reader;
    let (format, elements, header_lines) = read_header(&mut reader)?;
    let table = match format {
        PlyFormat::Ascii => read_ascii(reader, &elements, header_lines)?,
        PlyFormat::BinaryLittleEndian => read_binary(reader, &elements, false)?,
        PlyFormat::BinaryBigEndian => read_binary(reader, &elements, true)?,
    };
    let table = table.ok_or_else(|| IoError::MissingProperty("vertex".into()))?;
    if table.count == 0 {
        return Err(parse_error("header".into(), "vertex count must be positive"));
    }
    Ok(table)
}

fn labels_from(table: &VertexTable) -> Result<Vec<RegionId>, IoError> {
    let Some(column) = table.column("region") else {
        return Ok(vec![0; table.count]);
    };
    column
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            if v == -1.0 {
                Ok(0)
            } else if v >= 0.0 && v.fract() == 0.0 && v <= RegionId::MAX as f64 {
                Ok(v as RegionId)
            } else {
                Err(IoError::BadLabelRange { index, value: v })
            }
        })
        .collect()
}

/// Reads positions, optional normals and colors, and region labels. A
/// missing `region` property, or the value -1, means the free region.
pub fn read_cloud(reader: impl BufRead) -> Result<CloudData, IoError> {
    let table = read_vertex_table(reader)?;
    let positions = table
        .triple("x", "y", "z")?
        .ok_or_else(|| IoError::MissingProperty("x".into()))?;
    let normals = table.triple("nx", "ny", "nz")?;
    let colors = match (table.column("red"), table.column("green"), table.column("blue")) {
        (None, None, None) => None,
        _ => {
            let (r, g, b) = (table.require("red")?, table.require("green")?, table.require("blue")?);
            let channel = |v: f64| v.clamp(0.0, 255.0) as u8;
            Some(
                (0..table.count)
                    .map(|i| [channel(r[i]), channel(g[i]), channel(b[i])])
                    .collect(),
            )
        }
    };
    Ok(CloudData {
        positions,
        normals,
        colors,
        labels: labels_from(&table)?,
    })
}

pub fn read_cloud_file(path: &std::path::Path) -> Result<CloudData, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::Open {
        path: path.display().to_string(),
        source: e,
    })?;
    read_cloud(std::io::BufReader::new(file))
}

#[derive(Clone, Copy)]
enum Value {
    F64(f64),
    U8(u8),
    I32(i32),
}

struct PlyWriter<W: Write> {
    out: W,
    format: PlyFormat,
}

impl<W: Write> PlyWriter<W> {
    fn header(&mut self, count: usize, properties: &[(&str, &str)]) -> Result<(), IoError> {
        writeln!(self.out, "ply")?;
        writeln!(self.out, "format {} 1.0", self.format.keyword())?;
        writeln!(self.out, "element vertex {count}")?;
        for (ty, name) in properties {
            writeln!(self.out, "property {ty} {name}")?;
        }
        writeln!(self.out, "end_header")?;
        Ok(())
    }

    fn row(&mut self, values: &[Value]) -> Result<(), IoError> {
        match self.format {
            PlyFormat::Ascii => {
                for (k, v) in values.iter().enumerate() {
                    if k > 0 {
                        self.out.write_all(b" ")?;
                    }
                    match v {
                        Value::F64(x) if x.is_nan() => write!(self.out, "nan")?,
                        Value::F64(x) => write!(self.out, "{x:?}")?,
                        Value::U8(x) => write!(self.out, "{x}")?,
                        Value::I32(x) => write!(self.out, "{x}")?,
                    }
                }
                self.out.write_all(b"\n")?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in values {
                    match v {
                        Value::F64(x) => self.out.write_all(&x.to_le_bytes())?,
                        Value::U8(x) => self.out.write_all(&[*x])?,
                        Value::I32(x) => self.out.write_all(&x.to_le_bytes())?,
                    }
                }
            }
            PlyFormat::BinaryBigEndian => {
                for v in values {
                    match v {
                        Value::F64(x) => self.out.write_all(&x.to_be_bytes())?,
                        Value::U8(x) => self.out.write_all(&[*x])?,
                        Value::I32(x) => self.out.write_all(&x.to_be_bytes())?,
                    }
                }
            }
        }
        Ok(())
    }
}

fn label_value(index: usize, label: RegionId) -> Result<Value, IoError> {
    i32::try_from(label)
        .map(Value::I32)
        .map_err(|_| IoError::BadLabelRange {
            index,
            value: label as f64,
        })
}

/// Writes a cloud with float64 coordinates and normals, uchar colors and an
/// int region property.
pub fn write_cloud(out: impl Write, cloud: &CloudData, format: PlyFormat) -> Result<(), IoError> {
    let n = cloud.positions.len();
    if cloud.labels.len() != n
        || cloud.normals.as_ref().is_some_and(|v| v.len() != n)
        || cloud.colors.as_ref().is_some_and(|v| v.len() != n)
    {
        return Err(IoError::LengthMismatch);
    }
    let mut properties = vec![("double", "x"), ("double", "y"), ("double", "z")];
    if cloud.normals.is_some() {
        properties.extend([("double", "nx"), ("double", "ny"), ("double", "nz")]);
    }
    if cloud.colors.is_some() {
        properties.extend([("uchar", "red"), ("uchar", "green"), ("uchar", "blue")]);
    }
    properties.push(("int", "region"));

    let mut writer = PlyWriter { out, format };
    writer.header(n, &properties)?;
    let mut row = Vec::with_capacity(properties.len());
    for i in 0..n {
        row.clear();
        let p = cloud.positions[i];
        row.extend([Value::F64(p.x), Value::F64(p.y), Value::F64(p.z)]);
        if let Some(normals) = &cloud.normals {
            let v = normals[i];
            row.extend([Value::F64(v.x), Value::F64(v.y), Value::F64(v.z)]);
        }
        if let Some(colors) = &cloud.colors {
            row.extend(colors[i].map(Value::U8));
        }
        row.push(label_value(i, cloud.labels[i])?);
        writer.row(&row)?;
    }
    writer.out.flush()?;
    Ok(())
}

/// A per-point field to export.
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Scalar(&'a ScalarField),
    Vector(&'a TangentVectorField),
}

impl FieldRef<'_> {
    fn len(&self) -> usize {
        match self {
            FieldRef::Scalar(f) => f.len(),
            FieldRef::Vector(f) => f.len(),
        }
    }
}

/// Writes positions plus the field as `u` (scalar) or `gx, gy, gz`
/// (vector), all float64, and a uchar `defined` mask. Undefined points carry
/// NaN.
pub fn write_field(out: impl Write, positions: &[Vec3], field: FieldRef<'_>, format: PlyFormat) -> Result<(), IoError> {
    if field.len() != positions.len() {
        return Err(IoError::LengthMismatch);
    }
    let mut properties = vec![("double", "x"), ("double", "y"), ("double", "z")];
    match field {
        FieldRef::Scalar(_) => properties.push(("double", "u")),
        FieldRef::Vector(_) => properties.extend([("double", "gx"), ("double", "gy"), ("double", "gz")]),
    }
    properties.push(("uchar", "defined"));

    let mut writer = PlyWriter { out, format };
    writer.header(positions.len(), &properties)?;
    let mut row = Vec::with_capacity(properties.len());
    for (i, p) in positions.iter().enumerate() {
        row.clear();
        row.extend([Value::F64(p.x), Value::F64(p.y), Value::F64(p.z)]);
        let defined = match field {
            FieldRef::Scalar(f) => {
                row.push(Value::F64(f.get(i).unwrap_or(f64::NAN)));
                f.is_defined(i)
            }
            FieldRef::Vector(f) => {
                let g = f.get(i).unwrap_or_else(|| Vec3::repeat(f64::NAN));
                row.extend([Value::F64(g.x), Value::F64(g.y), Value::F64(g.z)]);
                f.defined[i]
            }
        };
        row.push(Value::U8(defined as u8));
        writer.row(&row)?;
    }
    writer.out.flush()?;
    Ok(())
}

/// Reads back a scalar field written by [`write_field`].
pub fn read_scalar_field(reader: impl BufRead) -> Result<ScalarField, IoError> {
    let table = read_vertex_table(reader)?;
    let u = table.require("u")?.to_vec();
    let defined = match table.column("defined") {
        Some(d) => d.iter().map(|&v| v != 0.0).collect(),
        None => u.iter().map(|v| !v.is_nan()).collect(),
    };
    Ok(ScalarField::with_mask(u, defined))
}

/// Reads back a vector field written by [`write_field`].
pub fn read_vector_field(reader: impl BufRead) -> Result<TangentVectorField, IoError> {
    let table = read_vertex_table(reader)?;
    let vectors = table
        .triple("gx", "gy", "gz")?
        .ok_or_else(|| IoError::MissingProperty("gx".into()))?;
    let defined = match table.column("defined") {
        Some(d) => d.iter().map(|&v| v != 0.0).collect(),
        None => vectors.iter().map(|v| !v.x.is_nan()).collect(),
    };
    Ok(TangentVectorField { vectors, defined })
}

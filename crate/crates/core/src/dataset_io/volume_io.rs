//! Volume files: a JSON header next to a little-endian `f32` raw file, and
//! MetaImage (`.mhd` + raw) for CT import.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::geometry::Vec3;
use crate::volume::{GridSpec, VolumeKind, VoxelVolume};

use super::config::FemurAlignment;

pub const NATIVE_FORMAT: &str = "forge-volume/1";

/// Header of the native format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeHeader {
    pub format: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub kind: VolumeKind,
    /// Raw file name, relative to the header.
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub femoral_alignment: Option<FemurAlignment>,
}

/// Scalar types accepted in MetaImage files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    F32,
    F64,
}

impl ElementType {
    fn from_met(s: &str) -> Option<Self> {
        Some(match s {
            "MET_UCHAR" => Self::U8,
            "MET_CHAR" => Self::I8,
            "MET_USHORT" => Self::U16,
            "MET_SHORT" => Self::I16,
            "MET_UINT" => Self::U32,
            "MET_INT" => Self::I32,
            "MET_FLOAT" => Self::F32,
            "MET_DOUBLE" => Self::F64,
            _ => return None,
        })
    }

    pub fn size(&self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::U16 | Self::I16 => 2,
            Self::U32 | Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(&self, b: &[u8], big_endian: bool) -> f32 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = b.try_into().unwrap();
                if big_endian {
                    <$t>::from_be_bytes(arr)
                } else {
                    <$t>::from_le_bytes(arr)
                }
            }};
        }
        match self {
            Self::U8 => b[0] as f32,
            Self::I8 => b[0] as i8 as f32,
            Self::U16 => num!(u16) as f32,
            Self::I16 => num!(i16) as f32,
            Self::U32 => num!(u32) as f32,
            Self::I32 => num!(i32) as f32,
            Self::F32 => num!(f32),
            Self::F64 => num!(f64) as f32,
        }
    }
}

/// Everything needed to read the voxel data, without reading it.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeHeader {
    pub grid: GridSpec,
    pub kind: VolumeKind,
    pub data_path: PathBuf,
    pub element: ElementType,
    pub big_endian: bool,
    /// Bytes to skip at the start of the raw file.
    pub header_size: u64,
    pub femoral_alignment: Option<FemurAlignment>,
}

/// A CT as loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CtVolume {
    pub volume: VoxelVolume,
    pub femoral_alignment: Option<FemurAlignment>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ForgeError::io(format!("reading {}", path.display()), e))
}

fn sibling(header: &Path, name: &str) -> PathBuf {
    header.parent().unwrap_or_else(|| Path::new("")).join(name)
}

fn is_metaimage(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mhd"))
}

/// Parses the header of a native (`.json`) or MetaImage (`.mhd`) volume.
pub fn read_volume_header(path: &Path) -> Result<VolumeHeader> {
    let text = read_text(path)?;
    if is_metaimage(path) {
        parse_metaimage_header(&text, path)
    } else {
        parse_native_header(&text, path)
    }
}

pub fn parse_native_header(text: &str, path: &Path) -> Result<VolumeHeader> {
    let h: NativeHeader = serde_json::from_str(text).map_err(|e| ForgeError::parse("header", e.to_string()))?;
    if h.format != NATIVE_FORMAT {
        return Err(ForgeError::Unsupported {
            field: "format".into(),
            value: h.format,
        });
    }
    let grid = GridSpec::new(h.dims, Vec3::from(h.spacing_mm), Vec3::from(h.origin_mm))
        .map_err(|e| ForgeError::parse("dims/spacing_mm", e.to_string()))?;
    Ok(VolumeHeader {
        grid,
        kind: h.kind,
        data_path: sibling(path, &h.data_file),
        element: ElementType::F32,
        big_endian: false,
        header_size: 0,
        femoral_alignment: h.femoral_alignment,
    })
}

fn parse_numbers<const N: usize>(field: &str, value: &str) -> Result<[f64; N]> {
    let nums: Vec<f64> = value
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| ForgeError::parse(field, format!("`{t}` is not a number")))
        })
        .collect::<Result<_>>()?;
    nums.try_into()
        .map_err(|v: Vec<f64>| ForgeError::parse(field, format!("expected {N} values, found {}", v.len())))
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(ForgeError::parse(field, format!("`{value}` is not a boolean"))),
    }
}

/// Parses MetaImage header text. `path` locates the data file.
pub fn parse_metaimage_header(text: &str, path: &Path) -> Result<VolumeHeader> {
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ForgeError::parse(format!("line {}", n + 1), "expected `Key = Value`"))?;
        fields.insert(k.trim(), v.trim());
    }
    let get = |k: &str| fields.get(k).copied();
    let require = |k: &str| get(k).ok_or_else(|| ForgeError::parse(k, "missing"));

    let ndims: usize = require("NDims")?
        .parse()
        .map_err(|_| ForgeError::parse("NDims", "not an integer"))?;
    if ndims != 3 {
        return Err(ForgeError::Unsupported {
            field: "NDims".into(),
            value: ndims.to_string(),
        });
    }
    let dims_f = parse_numbers::<3>("DimSize", require("DimSize")?)?;
    if dims_f.iter().any(|&d| d < 1.0 || d.fract() != 0.0) {
        return Err(ForgeError::parse("DimSize", "dimensions must be positive integers"));
    }
    let dims = dims_f.map(|d| d as usize);
    let spacing = match get("ElementSpacing").or(get("ElementSize")) {
        Some(v) => parse_numbers::<3>("ElementSpacing", v)?,
        None => [1.0; 3],
    };
    let origin = match get("Offset").or(get("Origin")).or(get("Position")) {
        Some(v) => parse_numbers::<3>("Offset", v)?,
        None => [0.0; 3],
    };
    let elem_str = require("ElementType")?;
    let element = ElementType::from_met(elem_str).ok_or_else(|| ForgeError::Unsupported {
        field: "ElementType".into(),
        value: elem_str.into(),
    })?;
    if let Some(c) = get("ElementNumberOfChannels") {
        if c != "1" {
            return Err(ForgeError::Unsupported {
                field: "ElementNumberOfChannels".into(),
                value: c.into(),
            });
        }
    }
    if let Some(v) = get("CompressedData") {
        if parse_bool("CompressedData", v)? {
            return Err(ForgeError::Unsupported {
                field: "CompressedData".into(),
                value: v.into(),
            });
        }
    }
    if let Some(v) = get("BinaryData") {
        if !parse_bool("BinaryData", v)? {
            return Err(ForgeError::Unsupported {
                field: "BinaryData".into(),
                value: v.into(),
            });
        }
    }
    for key in ["TransformMatrix", "Rotation", "Orientation"] {
        if let Some(v) = get(key) {
            let m = parse_numbers::<9>(key, v)?;
            let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
            if m.iter().zip(identity).any(|(a, b)| (a - b).abs() > 1e-6) {
                return Err(ForgeError::Unsupported {
                    field: key.into(),
                    value: v.into(),
                });
            }
        }
    }
    let big_endian = match get("BinaryDataByteOrderMSB").or(get("ElementByteOrderMSB")) {
        Some(v) => parse_bool("BinaryDataByteOrderMSB", v)?,
        None => false,
    };
    let header_size = match get("HeaderSize") {
        Some(v) => {
            let n: i64 = v
                .parse()
                .map_err(|_| ForgeError::parse("HeaderSize", "not an integer"))?;
            if n < 0 {
                return Err(ForgeError::Unsupported {
                    field: "HeaderSize".into(),
                    value: v.into(),
                });
            }
            n as u64
        }
        None => 0,
    };
    let data_file = require("ElementDataFile")?;
    if data_file.eq_ignore_ascii_case("LOCAL") || data_file.starts_with("LIST") || data_file.contains('%') {
        return Err(ForgeError::Unsupported {
            field: "ElementDataFile".into(),
            value: data_file.into(),
        });
    }
    let grid = GridSpec::new(dims, Vec3::from(spacing), Vec3::from(origin))
        .map_err(|e| ForgeError::parse("ElementSpacing", e.to_string()))?;
    Ok(VolumeHeader {
        grid,
        kind: VolumeKind::Hu,
        data_path: sibling(path, data_file),
        element,
        big_endian,
        header_size,
        femoral_alignment: None,
    })
}

/// Reads the voxel data described by `header`.
pub fn read_volume_data(header: &VolumeHeader) -> Result<VoxelVolume> {
    let path = &header.data_path;
    let bytes = fs::read(path).map_err(|e| ForgeError::io(format!("reading {}", path.display()), e))?;
    let esize = header.element.size();
    let expected = header.header_size + (header.grid.len() * esize) as u64;
    if (bytes.len() as u64) < expected {
        return Err(ForgeError::Truncated {
            path: path.clone(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let body = &bytes[header.header_size as usize..expected as usize];
    let values = body
        .chunks_exact(esize)
        .map(|c| header.element.decode(c, header.big_endian))
        .collect();
    VoxelVolume::new(header.grid, header.kind, values)
}

pub fn read_volume(path: &Path) -> Result<VoxelVolume> {
    read_volume_data(&read_volume_header(path)?)
}

/// Reads a CT in native or MetaImage format. HU values pass through unmodified.
pub fn read_ct(path: &Path) -> Result<CtVolume> {
    let header = read_volume_header(path)?;
    if header.kind != VolumeKind::Hu {
        return Err(ForgeError::WrongKind {
            expected: VolumeKind::Hu.to_string(),
            actual: header.kind.to_string(),
        });
    }
    Ok(CtVolume {
        volume: read_volume_data(&header)?,
        femoral_alignment: header.femoral_alignment,
    })
}

pub(crate) fn f32_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| ForgeError::io(format!("creating {}", path.display()), e))?;
    f.write_all(bytes)
        .map_err(|e| ForgeError::io(format!("writing {}", path.display()), e))
}

fn data_name(header_path: &Path, ext: &str) -> Result<String> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| ForgeError::InvalidArgument(format!("bad volume path {}", header_path.display())))?;
    Ok(format!("{stem}.{ext}"))
}

/// Writes `<stem>.json` + `<stem>.f32raw`.
pub fn write_volume(vol: &VoxelVolume, header_path: &Path, alignment: Option<FemurAlignment>) -> Result<()> {
    let data_file = data_name(header_path, "f32raw")?;
    let header = NativeHeader {
        format: NATIVE_FORMAT.into(),
        dims: vol.grid.dims,
        spacing_mm: vol.grid.spacing_mm.into(),
        origin_mm: vol.grid.origin_mm.into(),
        kind: vol.kind,
        data_file: data_file.clone(),
        femoral_alignment: alignment,
    };
    write_file(
        &sibling(header_path, &data_file),
        &f32_le_bytes(vol.values.iter().copied()),
    )?;
    write_file(header_path, serde_json::to_string_pretty(&header)?.as_bytes())
}

/// Writes `<stem>.mhd` + `<stem>.raw` as little-endian `MET_FLOAT`.
pub fn write_metaimage(vol: &VoxelVolume, mhd_path: &Path) -> Result<()> {
    let data_file = data_name(mhd_path, "raw")?;
    let g = &vol.grid;
    let v3 = |v: &Vec3| format!("{} {} {}", v.x, v.y, v.z);
    let text = format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\nCompressedData = False\n\
         TransformMatrix = 1 0 0 0 1 0 0 0 1\nOffset = {}\nElementSpacing = {}\nDimSize = {} {} {}\n\
         ElementType = MET_FLOAT\nElementDataFile = {}\n",
        v3(&g.origin_mm),
        v3(&g.spacing_mm),
        g.dims[0],
        g.dims[1],
        g.dims[2],
        data_file
    );
    write_file(
        &sibling(mhd_path, &data_file),
        &f32_le_bytes(vol.values.iter().copied()),
    )?;
    write_file(mhd_path, text.as_bytes())
}

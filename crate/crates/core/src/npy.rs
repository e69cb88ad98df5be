//! Minimal `.npy` (NumPy array format, version 1.0) reader and writer.
//!
//! Only what the pipeline needs: little-endian `float32` / `float64`,
//! C-order, any dimensionality. Scalar volumes are stored with shape
//! `(h, w, d)` and transport maps with shape `(3, h, w, d)`, component
//! first.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::grid::{DensityVolume, GridSpec, VectorField};
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Element type on disk. Values are `f64` in memory either way; writing
/// `F32` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn descr(&self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
        }
    }

    fn size(&self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Read any supported `.npy` file into `(shape, values)`.
pub fn read(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|reason| Error::format(path, reason))
}

/// Write `values` with the given shape. Fails if the shape does not match
/// the number of values.
pub fn write(path: &Path, shape: &[usize], values: &[f64], dtype: DType) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != values.len() {
        return Err(Error::DimMismatch {
            context: "npy write",
            expected: count,
            got: values.len(),
        });
    }
    let header = build_header(shape, dtype);
    let mut buf = Vec::with_capacity(header.len() + values.len() * dtype.size());
    buf.extend_from_slice(&header);
    match dtype {
        DType::F32 => {
            for &v in values {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for &v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    write_atomic(path, &buf)
}

/// Write into a temporary sibling then rename, so readers never observe a
/// half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("npy.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn build_header(shape: &[usize], dtype: DType) -> Vec<u8> {
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // Magic (6) + version (2) + header length (2) + dict + padding + '\n',
    // padded so the total is a multiple of 64.
    let unpadded = 10 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;
    let mut out = Vec::with_capacity(10 + header_len);
    out.extend_from_slice(MAGIC);
    out.push(1);
    out.push(0);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(padding));
    out.push(b'\n');
    out
}

fn parse(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err("not an npy file (bad magic)".into());
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if major != 1 || minor != 0 {
        return Err(format!("unsupported npy version {major}.{minor}"));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err("truncated header".into());
    }
    let header = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| "header is not valid ASCII".to_string())?;

    let descr = dict_str_value(header, "descr").ok_or("header missing 'descr'")?;
    let dtype = match descr.as_str() {
        "<f4" => DType::F32,
        "<f8" => DType::F64,
        other => return Err(format!("unsupported dtype '{other}', expected '<f4' or '<f8'")),
    };
    let fortran = dict_raw_value(header, "fortran_order").ok_or("header missing 'fortran_order'")?;
    match fortran.as_str() {
        "False" => {}
        "True" => return Err("fortran_order arrays are not supported".into()),
        other => return Err(format!("bad fortran_order value '{other}'")),
    }
    let shape_raw = dict_raw_value(header, "shape").ok_or("header missing 'shape'")?;
    let shape = parse_shape(&shape_raw)?;

    let count: usize = shape.iter().product();
    let expected = count * dtype.size();
    let data = &bytes[data_start..];
    if data.len() < expected {
        return Err(format!(
            "expected {expected} data bytes for shape {shape:?}, found {}",
            data.len()
        ));
    }
    let mut values = Vec::with_capacity(count);
    match dtype {
        DType::F32 => {
            for chunk in data[..expected].chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        DType::F64 => {
            for chunk in data[..expected].chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    Ok((shape, values))
}

/// Pull the quoted string assigned to `key` out of the header dict literal.
fn dict_str_value(header: &str, key: &str) -> Option<String> {
    let raw = dict_raw_value(header, key)?;
    let trimmed = raw.trim_matches(|c| c == '\'' || c == '"');
    if trimmed.len() + 2 != raw.len() {
        return None;
    }
    Some(trimmed.to_string())
}

/// Pull the raw token (up to the next top-level comma or closing brace)
/// assigned to `key`.
fn dict_raw_value(header: &str, key: &str) -> Option<String> {
    let pat = format!("'{key}'");
    let start = header.find(&pat)? + pat.len();
    let rest = header[start..].trim_start();
    let rest = rest.strip_prefix(':')?.trim_start();
    let mut depth = 0usize;
    let mut end = rest.len();
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => {
                if depth == 0 {
                    end = i;
                    break;
                }
                depth -= 1;
            }
            ',' | '}' if depth == 0 => {
                end = i;
                break;
            }
            _ => {}
        }
    }
    Some(rest[..end].trim().to_string())
}

fn parse_shape(raw: &str) -> std::result::Result<Vec<usize>, String> {
    let inner = raw
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("bad shape tuple '{raw}'"))?;
    let mut shape = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        shape.push(
            part.parse::<usize>()
                .map_err(|_| format!("bad shape element '{part}'"))?,
        );
    }
    if shape.is_empty() {
        return Err("zero-dimensional arrays are not supported".into());
    }
    Ok(shape)
}

/// Read a scalar volume stored as shape `(h, w, d)`.
pub fn read_volume(path: &Path) -> Result<DensityVolume> {
    let (shape, values) = read(path)?;
    if shape.len() != 3 {
        return Err(Error::Shape {
            path: path.to_path_buf(),
            shape,
            expected: "(h, w, d)".into(),
        });
    }
    let grid = GridSpec::new(shape[0], shape[1], shape[2])?;
    DensityVolume::new(grid, values)
}

/// Write a scalar volume as shape `(h, w, d)`. `float32` by default; pass
/// [`DType::F64`] where bit-exact round-trips matter (the solve cache does).
pub fn write_volume(path: &Path, volume: &DensityVolume, dtype: DType) -> Result<()> {
    let [h, w, d] = volume.grid().dims();
    write(path, &[h, w, d], volume.values(), dtype)
}

/// Read a transport map stored as shape `(3, h, w, d)`.
pub fn read_field(path: &Path) -> Result<VectorField> {
    let (shape, values) = read(path)?;
    if shape.len() != 4 || shape[0] != 3 {
        return Err(Error::Shape {
            path: path.to_path_buf(),
            shape,
            expected: "(3, h, w, d)".into(),
        });
    }
    let grid = GridSpec::new(shape[1], shape[2], shape[3])?;
    let n = grid.len();
    let components = [
        values[..n].to_vec(),
        values[n..2 * n].to_vec(),
        values[2 * n..3 * n].to_vec(),
    ];
    VectorField::new(grid, components)
}

/// Write a transport map as shape `(3, h, w, d)`, component first.
pub fn write_field(path: &Path, field: &VectorField, dtype: DType) -> Result<()> {
    let [h, w, d] = field.grid().dims();
    let mut values = Vec::with_capacity(3 * field.grid().len());
    for axis in 0..3 {
        values.extend_from_slice(field.component(axis));
    }
    write(path, &[3, h, w, d], &values, dtype)
}

/// Read a 2D matrix (rows, cols), e.g. a feature matrix.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let (shape, values) = read(path)?;
    if shape.len() != 2 {
        return Err(Error::Shape {
            path: path.to_path_buf(),
            shape,
            expected: "(rows, cols)".into(),
        });
    }
    Ok((shape[0], shape[1], values))
}

/// Read a 1D vector, e.g. labels or model weights.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let (shape, values) = read(path)?;
    if shape.len() != 1 {
        return Err(Error::Shape {
            path: path.to_path_buf(),
            shape,
            expected: "(n,)".into(),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use tempfile::TempDir;

    #[test]
    fn header_is_64_byte_aligned() {
        for shape in [vec![3usize], vec![32, 32, 32], vec![3, 32, 32, 32]] {
            let h = build_header(&shape, DType::F32);
            assert_eq!(h.len() % 64, 0, "header len {} for {shape:?}", h.len());
            assert_eq!(&h[..6], MAGIC);
            assert_eq!(h[h.len() - 1], b'\n');
        }
    }

    #[test]
    fn volume_round_trips_in_f64() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.npy");
        let grid = GridSpec::new(3, 4, 5).unwrap();
        let vals: Vec<f64> = (0..grid.len()).map(|i| (i as f64).sin().abs()).collect();
        let v = DensityVolume::new(grid, vals).unwrap();
        write_volume(&path, &v, DType::F64).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back.grid(), grid);
        assert_eq!(back.values(), v.values());
    }

    #[test]
    fn f32_write_rounds_to_f32_precision() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.npy");
        let grid = GridSpec::new(2, 2, 2).unwrap();
        let v = DensityVolume::new(grid, vec![1.0 / 3.0; 8]).unwrap();
        write_volume(&path, &v, DType::F32).unwrap();
        let back = read_volume(&path).unwrap();
        assert_abs_diff_eq!(back.values()[0], (1.0f32 / 3.0) as f64, epsilon = 0.0);
    }

    #[test]
    fn field_round_trips_with_component_first_layout() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("f.npy");
        let grid = GridSpec::new(2, 3, 2).unwrap();
        let mut f = VectorField::identity(grid);
        f.component_mut(1)[4] = 9.5;
        write_field(&path, &f, DType::F64).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back, f);
        // The raw shape on disk must really be (3, h, w, d).
        let (shape, _) = read(&path).unwrap();
        assert_eq!(shape, vec![3, 2, 3, 2]);
    }

    #[test]
    fn numpy_reference_bytes_parse() {
        // `np.save` output for np.arange(4, dtype='<f4').reshape(2,2) was
        // captured byte-for-byte; the parser must accept real NumPy files.
        let mut bytes = Vec::new();
        let dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2), }";
        let pad = 64 - (10 + dict.len() + 1) % 64;
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&((dict.len() + pad + 1) as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.extend(std::iter::repeat(b' ').take(pad));
        bytes.push(b'\n');
        for v in [0.0f32, 1.0, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (shape, values) = parse(&bytes).unwrap();
        assert_eq!(shape, vec![2, 2]);
        assert_eq!(values, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_magic_and_wrong_shapes() {
        let dir = TempDir::new().unwrap();
        let bad = dir.path().join("bad.npy");
        std::fs::write(&bad, b"not an npy").unwrap();
        assert!(matches!(read(&bad), Err(Error::Format { .. })));

        let path = dir.path().join("m.npy");
        write(&path, &[4], &[1.0, 2.0, 3.0, 4.0], DType::F32).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Shape { .. })));
        assert!(matches!(read_field(&path), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_unsupported_dtype() {
        let dict = "{'descr': '<i8', 'fortran_order': False, 'shape': (1,), }";
        let pad = 64 - (10 + dict.len() + 1) % 64;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&((dict.len() + pad + 1) as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.extend(std::iter::repeat(b' ').take(pad));
        bytes.push(b'\n');
        bytes.extend_from_slice(&1i64.to_le_bytes());
        assert!(parse(&bytes).is_err());
    }

    #[test]
    fn rejects_truncated_data() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.npy");
        write(&path, &[4], &[1.0; 4], DType::F64).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read(&path), Err(Error::Format { .. })));
    }
}

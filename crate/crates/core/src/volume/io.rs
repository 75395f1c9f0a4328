//! Case directory format: `meta.json` plus one raw little-endian file per map.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dims, MapKind, PatientCase, Spacing, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_id: String,
    pub dims: Dims,
    pub spacing: Spacing,
    pub kinds: Vec<String>,
    pub dtype: String,
    #[serde(default)]
    pub has_gt: bool,
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

pub fn write_raw_f32(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_raw_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Data(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_raw_u8(path: &Path, mask: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&v| (v != 0.0) as u8).collect();
    write_atomic(path, &bytes)
}

pub fn read_raw_u8(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(0.0),
            1 => Ok(1.0),
            _ => Err(Error::Data(format!("{}: mask byte {b} not in {{0,1}}", path.display()))),
        })
        .collect()
}

fn map_path(dir: &Path, kind: MapKind) -> PathBuf {
    match kind {
        MapKind::Mask => dir.join("GT.u8"),
        k => dir.join(format!("{}.f32", k.file_stem())),
    }
}

pub fn save_case(dir: &Path, case: &PatientCase) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for m in &case.maps {
        write_raw_f32(&map_path(dir, m.kind()), m.data())?;
    }
    if let Some(gt) = &case.gt {
        write_raw_u8(&map_path(dir, MapKind::Mask), gt.data())?;
    }
    let meta = CaseMeta {
        case_id: case.case_id.clone(),
        dims: case.dims(),
        spacing: case.spacing(),
        kinds: case.maps.iter().map(|m| m.kind().file_stem().to_string()).collect(),
        dtype: "f32".into(),
        has_gt: case.gt.is_some(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

pub fn load_case(dir: &Path) -> Result<PatientCase> {
    let meta: CaseMeta = read_json(&dir.join("meta.json"))?;
    if meta.dtype != "f32" {
        return Err(Error::Data(format!("{}: unsupported dtype {}", dir.display(), meta.dtype)));
    }
    let n = meta.dims.iter().product();
    let mut maps = Vec::with_capacity(6);
    for name in &meta.kinds {
        let kind = MapKind::from_name(name)
            .filter(|k| k.parametric_index().is_some())
            .ok_or_else(|| Error::Data(format!("{}: unknown map kind {name}", dir.display())))?;
        let data = read_raw_f32(&map_path(dir, kind), n)?;
        maps.push(Volume::new(meta.dims, meta.spacing, kind, data)?);
    }
    let gt_path = map_path(dir, MapKind::Mask);
    let gt = if gt_path.exists() {
        Some(Volume::new(meta.dims, meta.spacing, MapKind::Mask, read_raw_u8(&gt_path, n)?)?)
    } else {
        None
    };
    PatientCase::from_unordered(meta.case_id, maps, gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_round_trips_through_directory() {
        let dims = [3, 2, 2];
        let maps = MapKind::PARAMETRIC
            .iter()
            .enumerate()
            .map(|(k, &kind)| {
                Volume::new(dims, [1.0, 1.0, 2.5], kind, (0..12).map(|i| (i * k) as f32 * 0.5).collect())
                    .unwrap()
            })
            .collect();
        let gt = Volume::new(dims, [1.0, 1.0, 2.5], MapKind::Mask, (0..12).map(|i| (i % 2) as f32).collect())
            .unwrap();
        let case = PatientCase::new("case_007", maps, Some(gt)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_case(dir.path(), &case).unwrap();
        for f in ["ADC.f32", "MTT.f32", "TTP.f32", "TMAX.f32", "RCBV.f32", "RCBF.f32", "GT.u8", "meta.json"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        assert_eq!(fs::metadata(dir.path().join("GT.u8")).unwrap().len(), 12);
        let back = load_case(dir.path()).unwrap();
        assert_eq!(back.case_id, "case_007");
        assert_eq!(back.maps, case.maps);
        assert_eq!(back.gt, case.gt);
    }

    #[test]
    fn raw_f32_is_little_endian_x_fastest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        write_raw_f32(&p, &[1.0, -2.0]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        assert_eq!(read_raw_f32(&p, 2).unwrap(), vec![1.0, -2.0]);
        assert!(read_raw_f32(&p, 3).is_err());
    }
}

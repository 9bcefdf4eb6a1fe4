//! Attribution maps on disk: a float64 VVOL plus a `<map>.meta` sidecar of
//! `key=value` lines.
//!
//! Sidecar keys: `method`, `target_class`, `target_name`, `param.<name>` for
//! every metadata entry of the map, and `command` with the producing command
//! line. Only `param.*` entries take part in averaging compatibility checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use voxrel::attribution::{AttributionMap, Method};
use voxrel::io::{read_volume_file, write_volume, Dtype, VolumeFormat};
use voxrel::{Error, Result};

pub fn meta_path(map: &Path) -> PathBuf {
    let mut s = map.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_map(map: &AttributionMap, target_name: &str, command: &str, path: &Path) -> Result<()> {
    write_volume(&map.values, path, VolumeFormat::Vvol, Dtype::F64)?;
    let mut text = format!(
        "method={}\ntarget_class={}\ntarget_name={target_name}\n",
        map.method, map.target_class
    );
    for (k, v) in &map.metadata {
        text.push_str(&format!("param.{k}={v}\n"));
    }
    text.push_str(&format!("command={command}\n"));
    let meta = meta_path(path);
    fs::write(&meta, text).map_err(|source| Error::Io { path: meta, source })
}

pub struct StoredMap {
    pub map: AttributionMap,
    pub target_name: String,
}

pub fn read_map(path: &Path) -> Result<StoredMap> {
    let file = read_volume_file(path)?;
    if file.format != VolumeFormat::Vvol || file.dtype != Dtype::F64 {
        return Err(Error::Unsupported(format!(
            "{}: attribution maps are float64 VVOL files",
            path.display()
        )));
    }
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta).map_err(|source| Error::Io { path: meta.clone(), source })?;
    let mut fields = BTreeMap::new();
    let mut params = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: format!("{}: expected key=value", meta.display()),
        })?;
        match k.strip_prefix("param.") {
            Some(p) => params.insert(p.to_string(), v.to_string()),
            None => fields.insert(k.to_string(), v.to_string()),
        };
    }
    let field = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("{}: missing `{k}`", meta.display()) })
    };
    let method: Method = field("method")?.parse()?;
    let target_class = field("target_class")?
        .parse()
        .map_err(|e| Error::Parse { line: 0, msg: format!("{}: bad target_class: {e}", meta.display()) })?;
    let map = AttributionMap::new(file.tensor, method, target_class, params)?;
    Ok(StoredMap {
        map,
        target_name: field("target_name")?,
    })
}

//! Dataset directories: `<dir>/<role>/<index>.ppm` plus `manifest.tsv`.
//!
//! The manifest has the columns `index`, `role`, `content_kind` and `prompt`.
//! Person masks, when present, sit next to their image as
//! `<index>.mask.pgm`, and `provenance.txt` names the provenance. A directory
//! without `provenance.txt` is treated as ingested.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stylebind_core::data::{ContentKind, Provenance, Record, Role, StyleDataset};
use stylebind_core::prompt::tokenize;
use stylebind_core::Image;

use crate::error::{CliError, Result};
use crate::pnm;

pub const MANIFEST: &str = "manifest.tsv";
const PROVENANCE: &str = "provenance.txt";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    index: usize,
    role: String,
    content_kind: String,
    prompt: String,
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn tsv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).from_reader(f))
}

fn image_path(dir: &Path, role: Role, index: usize) -> PathBuf {
    dir.join(role.as_str()).join(format!("{index}.ppm"))
}

fn mask_path(dir: &Path, role: Role, index: usize) -> PathBuf {
    dir.join(role.as_str()).join(format!("{index}.mask.pgm"))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes every record of `ds` under `dir`.
pub fn write_dataset(dir: &Path, ds: &StyleDataset) -> Result<()> {
    create_dir(dir)?;
    let mut w = tsv_writer(&dir.join(MANIFEST))?;
    for (index, r) in ds.records().iter().enumerate() {
        create_dir(&dir.join(r.role.as_str()))?;
        pnm::write_ppm(&image_path(dir, r.role, index), &r.image)?;
        if let Some(m) = &r.person_mask {
            pnm::write_pgm(&mask_path(dir, r.role, index), m, 32, 32)?;
        }
        w.serialize(ManifestRow {
            index,
            role: r.role.to_string(),
            content_kind: r.content_kind.to_string(),
            prompt: r.prompt.text().to_string(),
        })?;
    }
    w.flush().map_err(|e| CliError::io(&dir.join(MANIFEST), e))?;
    let p = dir.join(PROVENANCE);
    std::fs::write(&p, format!("{}\n", ds.provenance)).map_err(|e| CliError::io(&p, e))
}

/// Reads a dataset directory; the style id is the directory name.
pub fn read_dataset(dir: &Path) -> Result<StyleDataset> {
    let manifest = dir.join(MANIFEST);
    let mut rd = tsv_reader(&manifest)?;
    let mut records = Vec::new();
    for (line, row) in rd.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| CliError::Data(format!("{} row {}: {e}", manifest.display(), line + 1)))?;
        let bad = |what: &str| CliError::Data(format!("{} row {}: {what}", manifest.display(), line + 1));
        let role: Role = row.role.parse().map_err(|_| bad(&format!("unknown role `{}`", row.role)))?;
        let content_kind: ContentKind =
            row.content_kind.parse().map_err(|_| bad(&format!("unknown content kind `{}`", row.content_kind)))?;
        let prompt = tokenize(&row.prompt)?;
        let image = pnm::read_ppm(&image_path(dir, role, row.index))?;
        let mp = mask_path(dir, role, row.index);
        let person_mask = if mp.exists() {
            let (m, w, h) = pnm::read_pgm(&mp)?;
            if (w, h) != (32, 32) {
                return Err(CliError::Data(format!("{}: mask is {w}x{h}, expected 32x32", mp.display())));
            }
            Some(m)
        } else {
            None
        };
        records.push(Record { image, prompt, role, content_kind, person_mask });
    }
    let pp = dir.join(PROVENANCE);
    let provenance = if pp.exists() {
        let s = std::fs::read_to_string(&pp).map_err(|e| CliError::io(&pp, e))?;
        s.trim().parse().map_err(|_| CliError::Data(format!("{}: unknown provenance `{}`", pp.display(), s.trim())))?
    } else {
        Provenance::Ingested
    };
    let style_id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(StyleDataset::new(style_id, provenance, records)?)
}

/// Images of a directory: the records of a dataset directory, or else every
/// `<n>.ppm` file ordered by `n`.
pub fn read_images(dir: &Path) -> Result<Vec<Image>> {
    if dir.join(MANIFEST).exists() {
        return Ok(read_dataset(dir)?.images());
    }
    let img_dir = if dir.join("images").is_dir() { dir.join("images") } else { dir.to_path_buf() };
    let mut numbered = Vec::new();
    for entry in std::fs::read_dir(&img_dir).map_err(|e| CliError::io(&img_dir, e))? {
        let path = entry.map_err(|e| CliError::io(&img_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
                numbered.push((n, path));
            }
        }
    }
    if numbered.is_empty() {
        return Err(CliError::Data(format!("no images found in {}", img_dir.display())));
    }
    numbered.sort();
    numbered.iter().map(|(_, p)| pnm::read_ppm(p)).collect()
}

/// Writes `images` as `<dir>/<i>.ppm`.
pub fn write_images(dir: &Path, images: &[Image]) -> Result<()> {
    create_dir(dir)?;
    for (i, img) in images.iter().enumerate() {
        pnm::write_ppm(&dir.join(format!("{i}.ppm")), img)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use stylebind_core::data::{build_aux_corpus, build_style_corpus, StyleName, StyleTransformSpec};

    #[test]
    fn round_trip_preserves_everything() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = build_style_corpus(&StyleTransformSpec::new(StyleName::Pixelation), 2, 3, 7).unwrap();
        let dir = tmp.path().join(&ds.style_id);
        write_dataset(&dir, &ds).unwrap();
        let back = read_dataset(&dir).unwrap();
        assert_eq!(back.style_id, ds.style_id);
        assert_eq!(back.provenance, ds.provenance);
        assert_eq!(back.len(), 5);
        for (a, b) in back.records().iter().zip(ds.records()) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.prompt, b.prompt);
            assert_eq!((a.role, a.content_kind), (b.role, b.content_kind));
            assert_eq!(a.person_mask, b.person_mask);
        }
        assert!(dir.join("styleref/0.ppm").exists());
        assert_eq!(read_images(&dir).unwrap().len(), 5);
    }

    #[test]
    fn aux_layout_and_plain_directories() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = build_aux_corpus(&StyleTransformSpec::new(StyleName::RealismAnalog), 3, 1).unwrap();
        write_dataset(tmp.path(), &ds).unwrap();
        assert!(tmp.path().join("aux/2.ppm").exists());
        let plain = tmp.path().join("plain");
        write_images(&plain, &ds.images()).unwrap();
        assert_eq!(read_images(&plain).unwrap(), ds.images());
    }

    #[test]
    fn manifest_errors_are_data_errors() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join(MANIFEST), "index\trole\tcontent_kind\tprompt\n0\tnope\tperson\ta photo of style\n").unwrap();
        let e = read_dataset(tmp.path()).unwrap_err();
        assert_eq!(e.exit_code(), 3, "{e}");
    }
}

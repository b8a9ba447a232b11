//! Download of the gzipped IDX files into a dataset directory.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::dataset::{builtin_sha256, sha256_hex, DataFile, DatasetId, MANIFEST_NAME};
use crate::error::{Error, Result};

pub fn base_url(dataset: DatasetId) -> &'static str {
    match dataset {
        DatasetId::Mnist => "https://ossci-datasets.s3.amazonaws.com/mnist/",
        DatasetId::FashionMnist => "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    }
}

fn download(url: &str) -> Result<Vec<u8>> {
    let resp = ureq::get(url)
        .call()
        .map_err(|e| Error::Argument(format!("download of {url} failed: {e}")))?;
    let mut buf = Vec::new();
    resp.into_reader()
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(url, e))?;
    Ok(buf)
}

/// Fetch any of the four files missing from `dir`. Files with a built-in digest
/// are checked against it; for the others a `SHA256SUMS` manifest is written
/// from what was downloaded.
pub fn fetch_missing(dir: &Path, dataset: DatasetId) -> Result<Vec<DataFile>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut fetched = Vec::new();
    let mut manifest = String::new();
    for file in DataFile::ALL {
        let path = dir.join(file.file_name());
        if path.is_file() {
            continue;
        }
        let url = format!("{}{}.gz", base_url(dataset), file.file_name());
        log::info!("fetching {url}");
        let gz = download(&url)?;
        let mut raw = Vec::new();
        GzDecoder::new(gz.as_slice())
            .read_to_end(&mut raw)
            .map_err(|e| Error::Format(format!("{url}: {e}")))?;
        let found = sha256_hex(&raw);
        match builtin_sha256(dataset, file) {
            Some(expected) if expected != found => {
                return Err(Error::Checksum {
                    path,
                    expected: expected.to_string(),
                    found,
                })
            }
            Some(_) => {}
            None => manifest.push_str(&format!("{found}  {}\n", file.file_name())),
        }
        fs::write(&path, raw).map_err(|e| Error::io(&path, e))?;
        fetched.push(file);
    }
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest.is_empty() && !manifest_path.exists() {
        fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok(fetched)
}

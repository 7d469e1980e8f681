use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub type CsvWriter = csv::Writer<BufWriter<File>>;

/// SHA-256 of the effective config (after flag overrides), hex encoded.
pub fn config_hash(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Opens `path` with a `# config_sha256=` line followed by the header row.
pub fn csv_file(path: &Path, hash: &str, header: &[String]) -> Result<CsvWriter> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut file = BufWriter::new(file);
    writeln!(file, "# config_sha256={hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

pub fn text_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

/// Shortest round-trip decimal; infinities print as `inf` / `-inf`.
pub fn num(v: f64) -> String {
    v.to_string()
}

/// `prefix0, prefix1, ...`
pub fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -2.5e-17, 1.0 / 3.0, f64::NEG_INFINITY] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(1.0), "1");
        assert_eq!(numbered("z", 2).collect::<Vec<_>>(), ["z0", "z1"]);
        assert_eq!(config_hash("").len(), 64);
    }
}

//! Manifests: one path per line, first tab-separated column, `#` comments.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    /// The path as written in the manifest.
    pub raw: String,
    /// `raw` resolved against the manifest's directory.
    pub path: PathBuf,
    /// Remaining tab-separated columns.
    pub extra: Vec<String>,
}

pub fn parse(text: &str, base: &Path) -> Vec<Entry> {
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| {
            let mut cols = l.split('\t').map(|c| c.trim().to_string());
            let raw = cols.next().unwrap_or_default();
            Entry { path: base.join(&raw), raw, extra: cols.filter(|c| !c.is_empty()).collect() }
        })
        .collect()
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path)
        .map_err(unitdur::Error::from)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    Ok(parse(&text, path.parent().unwrap_or(Path::new(""))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_column_relative_to_manifest() {
        let e = parse("# header\na.fmat\ta.units\n\n  \nsub/b.fmat\n", Path::new("/data"));
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].path, PathBuf::from("/data/a.fmat"));
        assert_eq!(e[0].extra, vec!["a.units".to_string()]);
        assert_eq!(e[1].raw, "sub/b.fmat");
        let abs = parse("/x/c.fmat\n", Path::new("/data"));
        assert_eq!(abs[0].path, PathBuf::from("/x/c.fmat"));
    }
}

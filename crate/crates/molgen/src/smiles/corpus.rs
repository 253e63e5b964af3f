//! Corpus files: UTF-8 text, one SMILES per line.

use std::fs;
use std::io;
use std::path::Path;

/// Load SMILES lines from a corpus file. Trailing whitespace is stripped;
/// empty lines and lines beginning with `#` are skipped.
pub fn load_corpus(path: &Path) -> io::Result<Vec<String>> {
    Ok(parse_corpus(&fs::read_to_string(path)?))
}

/// Same filtering as [`load_corpus`], over an in-memory string.
pub fn parse_corpus(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

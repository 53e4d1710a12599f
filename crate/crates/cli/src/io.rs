use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use sigma_core::{Error, Result};

/// Buffered writer to `path`, or stdout when `path` is `None`.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Lines of whitespace-separated token IDs, one document per line.
pub fn read_token_lines(path: &Path) -> Result<Vec<Vec<u32>>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Format(format!("{}:{}: bad token id {t:?}", path.display(), i + 1)))
                })
                .collect()
        })
        .collect()
}

pub fn write_token_lines<W: Write>(mut w: W, docs: &[Vec<u32>]) -> Result<()> {
    for doc in docs {
        let line: Vec<String> = doc.iter().map(ToString::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Numbers separated by whitespace or commas; `#` starts a comment.
pub fn read_numbers<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            out.push(
                tok.parse()
                    .map_err(|_| Error::Format(format!("{}:{}: bad number {tok:?}", path.display(), i + 1)))?,
            );
        }
    }
    Ok(out)
}

//! JSON Lines outfit corpus files.
//!
//! One outfit per line:
//! `{"outfit_id": "...", "seq": 3, "products": [{"id": "...", "slot": "shoes"}]}`.
//! Lines starting with `#` and blank lines are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{CatalogError, Corpus, Outfit, Product, Result, Slot};

#[derive(Deserialize)]
struct RawOutfit {
    outfit_id: String,
    seq: u64,
    products: Vec<RawProduct>,
}

#[derive(Deserialize)]
struct RawProduct {
    id: String,
    slot: String,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CatalogError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_corpus(BufReader::new(file))
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut outfits = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CatalogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: RawOutfit = serde_json::from_str(trimmed).map_err(|e| CatalogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let products = raw
            .products
            .into_iter()
            .map(|p| {
                let slot = p.slot.parse::<Slot>().map_err(|_| CatalogError::UnknownSlot {
                    line: line_no,
                    slot: p.slot.clone(),
                })?;
                Ok(Product { id: p.id, slot })
            })
            .collect::<Result<Vec<_>>>()?;
        outfits.push(Outfit {
            id: raw.outfit_id,
            seq: raw.seq,
            products,
        });
    }
    Corpus::new(outfits)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> std::io::Result<()> {
    for outfit in corpus.outfits() {
        serde_json::to_writer(&mut writer, outfit)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CatalogError::Io {
        path: path.to_owned(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(corpus, BufWriter::new(file)).map_err(io_err)
}

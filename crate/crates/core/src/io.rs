//! Dataset file formats.
//!
//! Three layouts are read; labels on disk are `1..=C` and become `0..C` in
//! memory.
//!
//! **CSV** — one row per sample: the flattened tensor (first mode fastest)
//! followed by the label. The tensor shape is supplied by the caller. A first
//! row that does not parse as numbers is treated as a header.
//!
//! **Raw tensor binary** — all integers little-endian:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "TTDS"
//! 4       1         version (1)
//! 5       1         dtype (0 = f64, 1 = f32)
//! 6       4         n, number of tensor modes (u32)
//! 10      8·n       mode sizes (u64 each)
//! …       8         N, number of samples (u64)
//! …       4         C, number of classes (u32)
//! …       4·N       labels (u32, 1..=C)
//! …       N·D·w     samples back to back, each first-mode-fastest; w = 8 or 4
//! ```
//!
//! **Image directory** — one subdirectory per class, visited in name order
//! (first = class 1). Every `.pgm` file in it, also in name order, becomes an
//! `H × W` tensor with entry `(row, col)` equal to the grey value.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::evalbench::LabeledDataset;
use crate::tensor::DenseTensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TTDS";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetFormat {
    Csv { shape: Vec<usize> },
    Raw,
    PgmDir,
}

pub fn load_dataset(path: &Path, format: &DatasetFormat) -> Result<LabeledDataset> {
    match format {
        DatasetFormat::Csv { shape } => load_csv(path, shape),
        DatasetFormat::Raw => load_raw(path),
        DatasetFormat::PgmDir => load_pgm_dir(path),
    }
}

fn to_zero_based(labels: Vec<u64>, declared: Option<usize>) -> Result<(Vec<usize>, usize)> {
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let classes = declared.unwrap_or(max);
    let mut out = Vec::with_capacity(labels.len());
    for (i, l) in labels.into_iter().enumerate() {
        if l == 0 || l as usize > classes {
            return Err(Error::format(format!("sample {i}: label {l} outside 1..={classes}")));
        }
        out.push(l as usize - 1);
    }
    Ok((out, classes))
}

pub fn load_csv(path: &Path, shape: &[usize]) -> Result<LabeledDataset> {
    let file = fs::File::open(path)?;
    read_csv(file, shape, &path.display().to_string())
}

pub fn read_csv<R: Read>(reader: R, shape: &[usize], source: &str) -> Result<LabeledDataset> {
    let d: usize = shape.iter().product();
    if shape.is_empty() || d == 0 {
        return Err(Error::invalid(format!("bad sample shape {shape:?}")));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("row {}: {e}", row + 1)))?;
        let values: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(Error::format(format!("row {}: {e}", row + 1))),
        };
        if values.len() != d + 1 {
            return Err(Error::format(format!(
                "row {} has {} fields, expected {} values and a label",
                row + 1,
                values.len(),
                d
            )));
        }
        let label = values[d];
        if label.fract() != 0.0 || label < 1.0 {
            return Err(Error::format(format!("row {}: label {label} is not a positive integer", row + 1)));
        }
        labels.push(label as u64);
        samples.push(DenseTensor::new(shape.to_vec(), values[..d].to_vec())?);
    }
    let (labels, classes) = to_zero_based(labels, None)?;
    LabeledDataset::new(samples, labels, classes, source)
}

pub fn load_raw(path: &Path) -> Result<LabeledDataset> {
    let file = fs::File::open(path)?;
    read_raw(BufReader::new(file), &path.display().to_string())
}

pub fn read_raw<R: Read>(mut r: R, source: &str) -> Result<LabeledDataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::format(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::format("not a raw tensor dataset (bad magic)"));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte).map_err(|e| Error::format(format!("truncated header: {e}")))?;
    if byte[0] != VERSION {
        return Err(Error::format(format!("unsupported dataset version {}", byte[0])));
    }
    r.read_exact(&mut byte).map_err(|e| Error::format(format!("truncated header: {e}")))?;
    let width = match byte[0] {
        0 => 8,
        1 => 4,
        other => return Err(Error::format(format!("unknown dtype code {other}"))),
    };
    let order = read_u32(&mut r)? as usize;
    if order == 0 || order > 64 {
        return Err(Error::format(format!("implausible tensor order {order}")));
    }
    let shape: Vec<usize> = (0..order).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<_>>()?;
    let d = shape
        .iter()
        .try_fold(1usize, |acc, &m| acc.checked_mul(m).filter(|_| m > 0))
        .ok_or_else(|| Error::format(format!("bad shape {shape:?}")))?;
    let n = read_u64(&mut r)? as usize;
    let classes = read_u32(&mut r)? as usize;
    let labels: Vec<u64> = (0..n).map(|_| read_u32(&mut r).map(u64::from)).collect::<Result<_>>()?;
    let (labels, classes) = to_zero_based(labels, Some(classes))?;

    let mut samples = Vec::with_capacity(n);
    let mut buf = vec![0u8; d * width];
    for _ in 0..n {
        r.read_exact(&mut buf)
            .map_err(|e| Error::format(format!("truncated sample data: {e}")))?;
        let data: Vec<f64> = if width == 8 {
            buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        } else {
            buf.chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect()
        };
        samples.push(DenseTensor::new(shape.clone(), data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after sample data"));
    }
    LabeledDataset::new(samples, labels, classes, source)
}

/// Writes a dataset in the raw binary layout with `f64` samples.
pub fn write_raw<W: Write>(data: &LabeledDataset, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, 0])?;
    let shape = data.sample_shape();
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &m in shape {
        w.write_all(&(m as u64).to_le_bytes())?;
    }
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    w.write_all(&(data.num_classes() as u32).to_le_bytes())?;
    for &l in data.labels() {
        w.write_all(&(l as u32 + 1).to_le_bytes())?;
    }
    for s in data.samples() {
        for v in s.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_raw(data: &LabeledDataset, path: &Path) -> Result<()> {
    write_raw(data, fs::File::create(path)?)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    Ok(entries)
}

pub fn load_pgm_dir(dir: &Path) -> Result<LabeledDataset> {
    let classes: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(Error::format(format!("{} has no class subdirectories", dir.display())));
    }
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (c, class_dir) in classes.iter().enumerate() {
        for file in sorted_entries(class_dir)? {
            let is_pgm = file
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
            if !is_pgm {
                continue;
            }
            let decoded = image::open(&file).map_err(|e| Error::format(format!("{}: {e}", file.display())))?;
            // 8-bit images are widened by 257 on conversion; undo that to keep 0..=255
            let scale = if decoded.color() == image::ColorType::L16 { 1.0 } else { 257.0 };
            let img = decoded.into_luma16();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let tensor = DenseTensor::from_fn(&[h, w], |idx| f64::from(img.get_pixel(idx[1] as u32, idx[0] as u32)[0]) / scale)?;
            if let Some(first) = samples.first().map(DenseTensor::shape) {
                if first != tensor.shape() {
                    return Err(Error::shape(format!(
                        "{} is {h}×{w}, earlier images are {:?}",
                        file.display(),
                        first
                    )));
                }
            }
            samples.push(tensor);
            labels.push(c);
        }
    }
    if samples.is_empty() {
        return Err(Error::format(format!("no .pgm images under {}", dir.display())));
    }
    LabeledDataset::new(samples, labels, classes.len(), dir.display().to_string())
}

/// Writes a matrix as CSV, one row per line.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_of_four_two_by_two_samples() {
        let text = "1,2,3,4,1\n5,6,7,8,2\n0,0,0,0,1\n-1,1,-1,1,2\n";
        let ds = read_csv(text.as_bytes(), &[2, 2], "mem").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels(), &[0, 1, 0, 1]);
        assert_eq!(ds.samples()[1].get(&[1, 0]).unwrap(), 6.0);
    }

    #[test]
    fn csv_header_is_skipped() {
        let text = "a,b,label\n1,2,1\n";
        let ds = read_csv(text.as_bytes(), &[2], "mem").unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        assert!(read_csv("1,2,3\n".as_bytes(), &[3], "mem").is_err());
        assert!(read_csv("1,2,0\n".as_bytes(), &[2], "mem").is_err());
        assert!(read_csv("1,2,1.5\n".as_bytes(), &[2], "mem").is_err());
        assert!(read_csv("1,2,1\n3,x,1\n".as_bytes(), &[2], "mem").is_err());
    }

    #[test]
    fn raw_round_trip_is_bit_identical() {
        let samples = vec![
            DenseTensor::new(vec![2, 3], vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, -0.0, 7.0]).unwrap(),
            DenseTensor::new(vec![2, 3], vec![1.0; 6]).unwrap(),
        ];
        let ds = LabeledDataset::new(samples, vec![2, 0], 3, "mem").unwrap();
        let mut buf = Vec::new();
        write_raw(&ds, &mut buf).unwrap();
        let back = read_raw(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.num_classes(), 3);
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &DenseTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn raw_rejects_malformed_input() {
        let ds = LabeledDataset::new(vec![DenseTensor::zeros(&[2]).unwrap()], vec![0], 1, "mem").unwrap();
        let mut buf = Vec::new();
        write_raw(&ds, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_raw(bad.as_slice(), "m"), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_raw(bad.as_slice(), "m").is_err());
        assert!(read_raw(&buf[..buf.len() - 1], "m").is_err());
        let mut bad = buf.clone();
        bad.push(0);
        assert!(read_raw(bad.as_slice(), "m").is_err());
        // label 2 with C = 1
        let label_at = 4 + 1 + 1 + 4 + 8 + 8 + 4;
        let mut bad = buf.clone();
        bad[label_at] = 2;
        assert!(read_raw(bad.as_slice(), "m").is_err());
    }
}

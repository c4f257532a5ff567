use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::trials::TrialSet;

const MAGIC: &[u8; 4] = b"EEGT";
const VERSION: u32 = 1;

/// Binary trial file: `EEGT`, then little-endian u32 version, n, C, T, N_c,
/// subject id, then `n·C·T` f64 values and `n` u16 labels.
pub fn write_trials_to<W: Write>(set: &TrialSet, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        set.len() as u32,
        set.channels() as u32,
        set.samples() as u32,
        set.classes() as u32,
        set.subject_id(),
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in set.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in set.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_section<R: Read>(r: &mut R, buf: &mut [u8], section: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated { section },
        _ => Error::Io(e),
    })
}

pub fn read_trials_from<R: Read>(r: R) -> Result<TrialSet> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    read_section(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format("not a trial file (bad magic)".into()));
    }
    let mut header = [0u8; 24];
    read_section(&mut r, &mut header[..4], "version")?;
    let version = u32::from_le_bytes(header[..4].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported trial file version {version}")));
    }
    read_section(&mut r, &mut header[4..], "header")?;
    let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
    let (n, c, t, classes, subject) = (field(1) as usize, field(2) as usize, field(3) as usize, field(4) as usize, field(5));

    let count = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(t))
        .ok_or_else(|| Error::Format("trial dimensions overflow".into()))?;
    let mut raw = vec![0u8; count * 8];
    read_section(&mut r, &mut raw, "trials")?;
    let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let mut raw = vec![0u8; n * 2];
    read_section(&mut r, &mut raw, "labels")?;
    let labels = raw.chunks_exact(2).map(|b| u16::from_le_bytes(b.try_into().unwrap())).collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after labels".into()));
    }
    TrialSet::new(subject, c, t, classes, data, labels)
}

pub fn write_trials(path: impl AsRef<Path>, set: &TrialSet) -> Result<()> {
    write_trials_to(set, File::create(path)?)
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialSet> {
    read_trials_from(File::open(path)?)
}

/// Parses long-format CSV: one row per (trial, channel) with header
/// `subject,trial,label,channel,t0,…,t{T−1}`. Channels are zero-based.
/// Returns one set per subject in order of first appearance. `classes`
/// defaults to the largest label seen.
pub fn read_csv_from<R: Read>(r: R, classes: Option<usize>) -> Result<Vec<TrialSet>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader.headers()?.clone();
    let fixed = ["subject", "trial", "label", "channel"];
    if headers.len() <= fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Format(format!("CSV header must start with {} followed by t0..", fixed.join(","))));
    }
    for (i, h) in headers.iter().skip(fixed.len()).enumerate() {
        if h != format!("t{i}") {
            return Err(Error::Format(format!("expected column t{i}, found `{h}`")));
        }
    }
    let samples = headers.len() - fixed.len();

    struct Trial {
        label: u16,
        rows: Vec<(usize, Vec<f64>)>,
    }
    let mut subjects: IndexMap<u32, IndexMap<u64, Trial>> = IndexMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let int = |i: usize| -> Result<u64> {
            record[i]
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: `{}` is not a valid {}", &record[i], fixed[i])))
        };
        let (subject, trial, label, channel) = (int(0)?, int(1)?, int(2)?, int(3)?);
        let subject = u32::try_from(subject).map_err(|_| Error::Format(format!("line {line}: subject id too large")))?;
        let label = u16::try_from(label).map_err(|_| Error::Format(format!("line {line}: label too large")))?;
        let values = record
            .iter()
            .skip(fixed.len())
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("line {line}: `{v}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        let entry = subjects
            .entry(subject)
            .or_default()
            .entry(trial)
            .or_insert_with(|| Trial { label, rows: Vec::new() });
        if entry.label != label {
            return Err(Error::Format(format!("line {line}: trial {trial} has conflicting labels")));
        }
        entry.rows.push((channel as usize, values));
    }

    let max_label = subjects.values().flat_map(|t| t.values().map(|t| t.label)).max().unwrap_or(0) as usize;
    let classes = classes.unwrap_or(max_label);
    let mut out = Vec::with_capacity(subjects.len());
    for (subject, trials) in subjects {
        let channels = trials.values().map(|t| t.rows.len()).max().unwrap_or(0);
        let mut data = Vec::with_capacity(trials.len() * channels * samples);
        let mut labels = Vec::with_capacity(trials.len());
        for (id, mut trial) in trials {
            trial.rows.sort_by_key(|(c, _)| *c);
            let complete = trial.rows.len() == channels && trial.rows.iter().enumerate().all(|(i, (c, _))| i == *c);
            if !complete {
                return Err(Error::Format(format!(
                    "subject {subject} trial {id}: channels must be exactly 0..{channels} once each"
                )));
            }
            for (_, values) in trial.rows {
                data.extend(values);
            }
            labels.push(trial.label);
        }
        out.push(TrialSet::new(subject, channels, samples, classes, data, labels)?);
    }
    if out.is_empty() {
        return Err(Error::Format("CSV contains no trials".into()));
    }
    Ok(out)
}

pub fn read_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Vec<TrialSet>> {
    read_csv_from(File::open(path)?, classes)
}

pub fn write_csv_to<W: Write>(sets: &[TrialSet], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    let Some(first) = sets.first() else { return Ok(()) };
    let mut header: Vec<String> = ["subject", "trial", "label", "channel"].iter().map(|s| s.to_string()).collect();
    header.extend((0..first.samples()).map(|i| format!("t{i}")));
    writer.write_record(&header)?;
    for set in sets {
        if set.samples() != first.samples() {
            return Err(Error::shape("write_csv", "all subjects must share T"));
        }
        for i in 0..set.len() {
            let trial = set.trial(i);
            for c in 0..set.channels() {
                let mut row = vec![
                    set.subject_id().to_string(),
                    i.to_string(),
                    set.labels()[i].to_string(),
                    c.to_string(),
                ];
                row.extend(trial[c * set.samples()..(c + 1) * set.samples()].iter().map(|v| format!("{v:?}")));
                writer.write_record(&row)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

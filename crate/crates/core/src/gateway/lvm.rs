//! LabVIEW measurement (LVM) text logs.
//!
//! ```text
//! LabVIEW Measurement
//! Writer_Version    2
//! Reader_Version    2
//! Separator    Tab
//! Multi_Headings    No
//! X_Columns    One
//! Time_Pref    Absolute
//! Date    2013/01/01
//! Time    00:00:00.000000
//! ***End_of_Header***
//! X_Value    Room1_Temp    ...    Room3_Lux    Comment
//! 0.000000    19.4    ...    0
//! ```
//!
//! X values are seconds since the log start with six decimals. Channel
//! values are written in their shortest round-trip form so reading a file
//! back yields bit-identical numbers; missing readings are written as `NaN`.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use chrono::DateTime;
use thiserror::Error;

use crate::time::Timestamp;

pub const END_OF_HEADER: &str = "***End_of_Header***";

#[derive(Debug, Error)]
pub enum LvmError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// `X_Value`, then temperature, humidity and light for each room, then `Comment`.
pub fn room_channels(rooms: usize) -> Vec<String> {
    let mut ch = vec!["X_Value".to_string()];
    for r in 1..=rooms {
        ch.push(format!("Room{r}_Temp"));
        ch.push(format!("Room{r}_RH"));
        ch.push(format!("Room{r}_Lux"));
    }
    ch.push("Comment".to_string());
    ch
}

/// Header block for a log starting at `start` (rendered in UTC).
pub fn header(start: Timestamp) -> String {
    let dt = DateTime::from_timestamp_micros(start.0 as i64).unwrap_or_default();
    format!(
        "LabVIEW Measurement\n\
         Writer_Version\t2\n\
         Reader_Version\t2\n\
         Separator\tTab\n\
         Multi_Headings\tNo\n\
         X_Columns\tOne\n\
         Time_Pref\tAbsolute\n\
         Date\t{}\n\
         Time\t{}\n\
         {END_OF_HEADER}\n",
        dt.format("%Y/%m/%d"),
        dt.format("%H:%M:%S%.6f"),
    )
}

fn format_x(start: Timestamp, at: Timestamp) -> String {
    let us = at.0.saturating_sub(start.0);
    format!("{}.{:06}", us / 1_000_000, us % 1_000_000)
}

pub struct LvmWriter<W: Write> {
    out: W,
    start: Timestamp,
    columns: usize,
    bytes_written: u64,
}

impl<W: Write> LvmWriter<W> {
    /// Writes the header block and channel row.
    pub fn new(mut out: W, start: Timestamp, channels: &[String]) -> io::Result<Self> {
        let head = header(start);
        let names = channels.join("\t") + "\n";
        out.write_all(head.as_bytes())?;
        out.write_all(names.as_bytes())?;
        Ok(LvmWriter {
            out,
            start,
            columns: channels.len(),
            bytes_written: (head.len() + names.len()) as u64,
        })
    }

    /// Appends one row. `values` excludes the X and Comment columns.
    pub fn append(&mut self, at: Timestamp, values: &[f64]) -> io::Result<()> {
        if values.len() + 2 != self.columns {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("expected {} values, got {}", self.columns - 2, values.len()),
            ));
        }
        let mut line = format_x(self.start, at);
        for v in values {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        line.push_str("\t\n");
        self.out.write_all(line.as_bytes())?;
        self.bytes_written += line.len() as u64;
        Ok(())
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// File-backed LVM log that rotates once it grows past `max_bytes`.
///
/// The active file keeps its path; rotated files become `<stem>.<n>.<ext>`.
pub struct LvmFile {
    path: PathBuf,
    start: Timestamp,
    channels: Vec<String>,
    max_bytes: Option<u64>,
    rotations: u32,
    writer: LvmWriter<BufWriter<File>>,
}

impl LvmFile {
    pub fn create(path: impl AsRef<Path>, start: Timestamp, channels: Vec<String>, max_bytes: Option<u64>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let writer = Self::open(&path, start, &channels)?;
        Ok(LvmFile { path, start, channels, max_bytes, rotations: 0, writer })
    }

    fn open(path: &Path, start: Timestamp, channels: &[String]) -> io::Result<LvmWriter<BufWriter<File>>> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        LvmWriter::new(BufWriter::new(file), start, channels)
    }

    pub fn rotated_path(&self, n: u32) -> PathBuf {
        let stem = self.path.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
        let name = match self.path.extension().and_then(|e| e.to_str()) {
            Some(ext) => format!("{stem}.{n}.{ext}"),
            None => format!("{stem}.{n}"),
        };
        self.path.with_file_name(name)
    }

    pub fn rotations(&self) -> u32 {
        self.rotations
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, at: Timestamp, values: &[f64]) -> io::Result<()> {
        self.writer.append(at, values)?;
        if self.max_bytes.is_some_and(|max| self.writer.bytes_written() >= max) {
            self.rotate()?;
        }
        Ok(())
    }

    fn rotate(&mut self) -> io::Result<()> {
        self.writer.flush()?;
        self.rotations += 1;
        fs::rename(&self.path, self.rotated_path(self.rotations))?;
        self.writer = Self::open(&self.path, self.start, &self.channels)?;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

enum LogMsg {
    Row(Timestamp, Vec<f64>),
    Flush(mpsc::Sender<io::Result<()>>),
}

/// Hands rows to a background thread so that disk writes never stall
/// ingestion. Dropping the queue drains it and flushes the file.
pub struct LogQueue {
    tx: Option<mpsc::Sender<LogMsg>>,
    worker: Option<thread::JoinHandle<io::Result<()>>>,
}

impl LogQueue {
    pub fn spawn(mut file: LvmFile) -> Self {
        let (tx, rx) = mpsc::channel::<LogMsg>();
        let worker = thread::spawn(move || {
            let mut first_err = None;
            for msg in rx {
                match msg {
                    LogMsg::Row(at, values) => {
                        if let Err(e) = file.append(at, &values) {
                            log::error!("lvm append failed: {e}");
                            first_err.get_or_insert(e);
                        }
                    }
                    LogMsg::Flush(ack) => {
                        let _ = ack.send(file.flush());
                    }
                }
            }
            file.flush()?;
            first_err.map_or(Ok(()), Err)
        });
        LogQueue { tx: Some(tx), worker: Some(worker) }
    }

    pub fn append(&self, at: Timestamp, values: Vec<f64>) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(LogMsg::Row(at, values));
        }
    }

    /// Blocks until every queued row has reached the file.
    pub fn flush(&self) -> io::Result<()> {
        let (ack_tx, ack_rx) = mpsc::channel();
        if let Some(tx) = &self.tx {
            tx.send(LogMsg::Flush(ack_tx)).map_err(|_| io::Error::other("log worker gone"))?;
        }
        ack_rx.recv().map_err(|_| io::Error::other("log worker gone"))?
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> io::Result<()> {
        self.tx.take();
        match self.worker.take() {
            Some(h) => h.join().map_err(|_| io::Error::other("log worker panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for LogQueue {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LvmRow {
    pub x: f64,
    pub values: Vec<f64>,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LvmLog {
    /// Header key/value pairs in file order.
    pub header: Vec<(String, String)>,
    pub channels: Vec<String>,
    pub rows: Vec<LvmRow>,
}

impl LvmLog {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn read_lvm(reader: impl BufRead) -> Result<LvmLog, LvmError> {
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, msg: &str| LvmError::Parse { line: line + 1, msg: msg.to_string() };

    let banner = lines.next().map(|(_, l)| l).transpose()?;
    if banner.as_deref().map(str::trim_end) != Some("LabVIEW Measurement") {
        return Err(parse_err(0, "missing LabVIEW Measurement banner"));
    }
    let mut header = Vec::new();
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(parse_err(0, "missing end of header"));
        };
        let line = line?;
        if line == END_OF_HEADER {
            break;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| parse_err(n, "header line without tab"))?;
        header.push((k.to_string(), v.to_string()));
    }
    let (n, names) = lines.next().ok_or_else(|| parse_err(0, "missing channel row"))?;
    let channels: Vec<String> = names?.split('\t').map(str::to_string).collect();
    if channels.len() < 2 {
        return Err(parse_err(n, "channel row needs X_Value and Comment"));
    }

    let mut rows = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != channels.len() {
            return Err(parse_err(n, &format!("expected {} cells, got {}", channels.len(), cells.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(n, &format!("bad number {s:?}")));
        let x = num(cells[0])?;
        let values = cells[1..cells.len() - 1].iter().map(|c| num(c)).collect::<Result<Vec<_>, _>>()?;
        rows.push(LvmRow { x, values, comment: cells[cells.len() - 1].to_string() });
    }
    Ok(LvmLog { header, channels, rows })
}

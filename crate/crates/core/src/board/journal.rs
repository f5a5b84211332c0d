//! Newline-delimited JSON journal for the board.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Board, BoardError, BoardEvent};

pub const JOURNAL_FILE: &str = "board.journal";
pub const SNAPSHOT_FILE: &str = "board_snapshot.json";

pub fn encode_event(ev: &BoardEvent) -> String {
    serde_json::to_string(ev).expect("board events always serialize")
}

pub fn encode(board: &Board) -> String {
    let mut out = String::new();
    for ev in board.events() {
        out.push_str(&encode_event(ev));
        out.push('\n');
    }
    out
}

/// SHA-256 over the encoded journal, hex.
pub fn digest(board: &Board) -> String {
    hex::encode(Sha256::digest(encode(board).as_bytes()))
}

/// Writes the full journal, replacing any existing file.
pub fn persist(board: &Board, path: &Path) -> Result<(), BoardError> {
    let tmp = path.with_extension("journal.tmp");
    std::fs::write(&tmp, encode(board))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses journal text. A final line without a trailing newline that fails to
/// parse is treated as a torn write and ignored; any other bad line is an error.
pub fn decode(text: &str) -> Result<Vec<BoardEvent>, BoardError> {
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<BoardEvent>(line) {
            Ok(ev) => events.push(ev),
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("ignoring torn journal tail at line {}", i + 1);
                break;
            }
            Err(e) => {
                return Err(BoardError::CorruptJournal {
                    line: i + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(events)
}

/// Loads a board from its journal. The workspace is the journal's directory.
pub fn load(path: &Path) -> Result<Board, BoardError> {
    let text = std::fs::read_to_string(path)?;
    let mut board = Board::replay(decode(&text)?)?;
    if let Some(dir) = path.parent() {
        board.set_workspace(dir);
    }
    Ok(board)
}

pub fn write_snapshot(board: &Board, path: &Path) -> Result<(), BoardError> {
    let text = serde_json::to_string_pretty(&board.snapshot()).expect("snapshot serializes");
    std::fs::write(path, text)?;
    Ok(())
}

/// Appends events to a journal file as they are committed.
pub struct JournalWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JournalWriter {
    pub fn open(path: &Path) -> Result<Self, BoardError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, ev: &BoardEvent) -> Result<(), BoardError> {
        self.out.write_all(encode_event(ev).as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::{Direction, MetricSpec, Phase, Policy};

    fn sample() -> Board {
        let mut b = Board::new(
            "c",
            5,
            MetricSpec::single("rmse", Direction::Min),
            Policy::default(),
            0,
        );
        b.set_phase(Phase::Phase3, 1);
        b.propose("a", "h", Some(2), 2);
        b.propose("b", "h", None, 3);
        b
    }

    #[test]
    fn empty_campaign_round_trips() {
        let b = Board::new(
            "c",
            0,
            MetricSpec::single("rmse", Direction::Min),
            Policy::default(),
            0,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(JOURNAL_FILE);
        persist(&b, &path).unwrap();
        let mut back = load(&path).unwrap();
        back.set_workspace("");
        assert_eq!(back, b);
    }

    #[test]
    fn torn_tail_is_ignored() {
        let b = sample();
        let text = encode(&b);
        let torn = &text[..text.len() - 7];
        let events = decode(torn).unwrap();
        assert_eq!(events.len(), b.events().len() - 1);
        assert_eq!(events[..], b.events()[..events.len()]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let b = sample();
        let mut lines: Vec<String> = encode(&b).lines().map(str::to_string).collect();
        lines[1] = "{not json".into();
        let text = lines.join("\n") + "\n";
        assert!(matches!(
            decode(&text),
            Err(BoardError::CorruptJournal { line: 2, .. })
        ));
    }

    #[test]
    fn writer_appends_lines_that_decode() {
        let b = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(JOURNAL_FILE);
        let mut w = JournalWriter::open(&path).unwrap();
        for ev in b.events() {
            w.append(ev).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, encode(&b));
    }
}

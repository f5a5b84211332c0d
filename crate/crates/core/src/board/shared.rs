use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;

use super::journal::JournalWriter;
use super::{Board, BoardError};
use crate::events::{EventBus, StreamBody};

struct Inner {
    board: Board,
    writer: Option<JournalWriter>,
}

/// The serialized write path to the board.
///
/// All mutations go through [`SharedBoard::write`], one at a time. New journal
/// records are appended to the journal file (when attached) and published on
/// the event bus before the lock is released, so subscribers see them in
/// journal order.
#[derive(Clone)]
pub struct SharedBoard {
    inner: Arc<Mutex<Inner>>,
    bus: EventBus,
}

impl SharedBoard {
    pub fn new(board: Board, bus: EventBus) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                board,
                writer: None,
            })),
            bus,
        }
    }

    /// Rewrites the journal at `path` from the in-memory board and keeps
    /// appending to it from now on.
    pub fn attach_journal(&self, path: &Path) -> Result<(), BoardError> {
        let mut inner = self.inner.lock();
        super::journal::persist(&inner.board, path)?;
        inner.writer = Some(JournalWriter::open(path)?);
        Ok(())
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn read<R>(&self, f: impl FnOnce(&Board) -> R) -> R {
        f(&self.inner.lock().board)
    }

    pub fn snapshot(&self) -> Board {
        self.read(Board::clone)
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut Board) -> R) -> R {
        let mut inner = self.inner.lock();
        let before = inner.board.events().len();
        let best_before = inner.board.campaign().best_primary;
        let out = f(&mut inner.board);
        let Inner { board, writer } = &mut *inner;
        for ev in &board.events()[before..] {
            if let Some(w) = writer.as_mut()
                && let Err(e) = w.append(ev) {
                    log::error!("journal append failed: {e}");
                }
            self.bus.publish(StreamBody::Board { event: ev.clone() });
        }
        let best_after = board.campaign().best_primary;
        if best_after != best_before {
            let leader = board.leaderboard(Some(1)).into_iter().next();
            self.bus.publish(StreamBody::Leaderboard {
                best: best_after,
                experiment: leader.map(|r| r.experiment),
            });
        }
        out
    }
}

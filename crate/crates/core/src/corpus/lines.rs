use crate::{Error, Result};

/// Newline offsets of a source text, for mapping byte offsets to lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIndex {
    newlines: Vec<usize>,
    len: usize,
}

impl LineIndex {
    pub fn new(text: &str) -> Self {
        let newlines = text
            .bytes()
            .enumerate()
            .filter(|(_, b)| *b == b'\n')
            .map(|(i, _)| i)
            .collect();
        Self {
            newlines,
            len: text.len(),
        }
    }

    pub fn text_len(&self) -> usize {
        self.len
    }

    /// Number of lines; a final line without a trailing newline counts.
    pub fn line_count(&self) -> usize {
        let unterminated = match self.newlines.last() {
            Some(&last) => usize::from(last + 1 < self.len),
            None => usize::from(self.len > 0),
        };
        self.newlines.len() + unterminated
    }

    /// 1-based line containing `offset`. A newline byte belongs to the line it
    /// terminates; the end-of-text offset belongs to the last line.
    pub fn line_of(&self, offset: usize) -> Result<usize> {
        if offset > self.len {
            return Err(Error::OffsetOutOfRange { offset, len: self.len });
        }
        let before = self.newlines.partition_point(|&nl| nl < offset);
        Ok((before + 1).min(self.line_count().max(1)))
    }

    /// Byte offset where a 1-based line starts.
    pub fn line_start(&self, line: usize) -> Option<usize> {
        match line {
            0 => None,
            1 => Some(0),
            l => self.newlines.get(l - 2).map(|nl| nl + 1),
        }
    }
}

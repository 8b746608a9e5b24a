use std::io::BufRead;
use std::str::FromStr;

use super::SfmError;

/// Whitespace token stream over a buffered reader that keeps one line in
/// memory and tracks the current line number for diagnostics.
pub(crate) struct Tokens<R> {
    reader: R,
    line: String,
    pos: usize,
    line_no: usize,
}

impl<R: BufRead> Tokens<R> {
    pub fn new(reader: R) -> Self {
        Tokens {
            reader,
            line: String::new(),
            pos: 0,
            line_no: 0,
        }
    }

    pub fn line_no(&self) -> usize {
        self.line_no
    }

    /// Reads the next raw line, bypassing tokenization. Returns `None` at EOF.
    pub fn raw_line(&mut self) -> Result<Option<String>, SfmError> {
        self.line.clear();
        self.pos = 0;
        if self.reader.read_line(&mut self.line)? == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        let out = self.line.trim_end_matches(['\n', '\r']).to_string();
        self.pos = self.line.len();
        Ok(Some(out))
    }

    fn next_token(&mut self) -> Result<Option<(usize, usize)>, SfmError> {
        loop {
            let bytes = self.line.as_bytes();
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < bytes.len() {
                let start = self.pos;
                while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                return Ok(Some((start, self.pos)));
            }
            self.line.clear();
            self.pos = 0;
            if self.reader.read_line(&mut self.line)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
        }
    }

    pub fn parse<T: FromStr>(&mut self, context: &'static str) -> Result<T, SfmError> {
        let Some((s, e)) = self.next_token()? else {
            return Err(SfmError::TruncatedFile {
                line: self.line_no,
                context,
            });
        };
        let tok = &self.line[s..e];
        tok.parse().map_err(|_| SfmError::InvalidToken {
            line: self.line_no,
            token: tok.to_string(),
            context,
        })
    }

    /// True when only whitespace remains.
    pub fn at_end(&mut self) -> Result<bool, SfmError> {
        match self.next_token()? {
            None => Ok(true),
            Some((s, _)) => {
                self.pos = s;
                Ok(false)
            }
        }
    }
}

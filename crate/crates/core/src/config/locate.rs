//! Maps a JSON pointer back to a line and column of the source text, so
//! schema and semantic errors can point at the offending value.

struct Scanner<'a> {
    text: &'a str,
    pos: usize,
}

impl Scanner<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, byte: u8) -> Option<()> {
        self.ws();
        (self.peek()? == byte).then(|| self.pos += 1)
    }

    /// End offset (exclusive) of the string literal starting at `pos`.
    fn string_end(&self) -> Option<usize> {
        let bytes = self.text.as_bytes();
        let mut i = self.pos + 1;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'"' => return Some(i + 1),
                _ => i += 1,
            }
        }
        None
    }

    fn key(&mut self) -> Option<String> {
        self.ws();
        if self.peek()? != b'"' {
            return None;
        }
        let end = self.string_end()?;
        let key = serde_json::from_str(&self.text[self.pos..end]).ok()?;
        self.pos = end;
        Some(key)
    }

    fn skip_value(&mut self) -> Option<()> {
        self.ws();
        match self.peek()? {
            b'"' => self.pos = self.string_end()?,
            b'{' | b'[' => {
                let mut depth = 0usize;
                loop {
                    match self.peek()? {
                        b'"' => {
                            self.pos = self.string_end()?;
                            continue;
                        }
                        b'{' | b'[' => depth += 1,
                        b'}' | b']' => {
                            depth -= 1;
                            if depth == 0 {
                                self.pos += 1;
                                return Some(());
                            }
                        }
                        _ => {}
                    }
                    self.pos += 1;
                }
            }
            _ => {
                while !matches!(
                    self.peek(),
                    None | Some(b',' | b'}' | b']' | b' ' | b'\t' | b'\n' | b'\r')
                ) {
                    self.pos += 1;
                }
            }
        }
        Some(())
    }

    fn enter(&mut self, token: &str) -> Option<()> {
        self.ws();
        match self.peek()? {
            b'{' => {
                self.pos += 1;
                loop {
                    let key = self.key()?;
                    self.eat(b':')?;
                    if key == token {
                        self.ws();
                        return Some(());
                    }
                    self.skip_value()?;
                    self.eat(b',')?;
                }
            }
            b'[' => {
                self.pos += 1;
                let index: usize = token.parse().ok()?;
                for _ in 0..index {
                    self.skip_value()?;
                    self.eat(b',')?;
                }
                self.ws();
                Some(())
            }
            _ => None,
        }
    }
}

/// 1-based `(line, column)` of the value addressed by `pointer`, or of
/// the deepest enclosing value that could be found.
pub(crate) fn locate(text: &str, pointer: &str) -> (usize, usize) {
    let mut scanner = Scanner { text, pos: 0 };
    scanner.ws();
    let mut found = scanner.pos;
    for token in pointer.split('/').skip(1) {
        let token = token.replace("~1", "/").replace("~0", "~");
        if scanner.enter(&token).is_none() {
            break;
        }
        found = scanner.pos;
    }
    line_col(text, found)
}

pub(crate) fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
  "name": "x",
  "g_upper": [["1", "0"],
              ["0", "1/r^2"]],
  "box": {"min": [0.5, -1], "max": [2, 1]},
  "a/b": {"q\"k": 3}
}"#;

    #[test]
    fn finds_nested_values() {
        assert_eq!(locate(DOC, ""), (1, 1));
        assert_eq!(locate(DOC, "/name"), (2, 11));
        assert_eq!(locate(DOC, "/g_upper/1/1"), (4, 21));
        assert_eq!(locate(DOC, "/box/max/0"), (5, 37));
        assert_eq!(locate(DOC, "/a~1b/q\"k"), (6, 19));
    }

    #[test]
    fn missing_paths_stop_at_the_parent() {
        assert_eq!(locate(DOC, "/box/nope"), (5, 10));
        assert_eq!(locate(DOC, "/g_upper/7"), (3, 14));
    }
}

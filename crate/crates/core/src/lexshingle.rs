//! Lexing of candidate source code and token-level k-shingling.
//!
//! The lexer understands enough of an indentation-based, Python-style grammar
//! to split source into keywords, identifiers, numeric literals, string
//! literals, operators and delimiters. Comments, newlines and indentation are
//! dropped so that layout changes do not move the shingle set.
//!
//! The lexer is total: byte runs it cannot classify are emitted as a single
//! delimiter-kind token, so malformed candidates still produce a sequence.

use std::fmt;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on candidate size.
pub const DEFAULT_MAX_SOURCE_BYTES: usize = 1 << 20;

/// Default shingle width in tokens.
pub const DEFAULT_SHINGLE_K: usize = 10;

/// Separator between serialized tokens of one window. Never appears in a lexeme.
const WINDOW_SEPARATOR: u8 = 0x1f;

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import",
    "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while",
    "with", "yield",
];

// Longest first within each length class; matched greedily.
const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "@=", ":=", "+", "-", "*", "/", "%", "@", "&", "|", "^", "~",
    "<", ">", "=",
];

const DELIMITERS: &[&str] = &[
    "...", "->", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexError {
    #[error("source is {size} bytes, above the {limit} byte limit")]
    Oversize { size: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    NumberLiteral,
    StringLiteral,
    Operator,
    Delimiter,
}

impl TokenKind {
    fn tag(self) -> &'static str {
        match self {
            TokenKind::Keyword => "kw",
            TokenKind::Identifier => "id",
            TokenKind::NumberLiteral => "num",
            TokenKind::StringLiteral => "str",
            TokenKind::Operator => "op",
            TokenKind::Delimiter => "delim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

impl Token {
    fn new(kind: TokenKind, text: impl Into<String>) -> Self {
        let text = text.into();
        debug_assert!(!text.is_empty());
        Self { kind, text }
    }

    /// True for delimiter-kind tokens that are not part of the grammar, i.e.
    /// byte runs the lexer could not classify.
    pub fn is_unlexable(&self) -> bool {
        self.kind == TokenKind::Delimiter && !DELIMITERS.contains(&self.text.as_str())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind.tag(), self.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    pub fn has_unlexable(&self) -> bool {
        self.tokens.iter().any(Token::is_unlexable)
    }

    /// Joins lexemes with single spaces.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&tok.text);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lexer {
    pub max_source_bytes: usize,
}

impl Default for Lexer {
    fn default() -> Self {
        Self {
            max_source_bytes: DEFAULT_MAX_SOURCE_BYTES,
        }
    }
}

impl Lexer {
    pub fn new(max_source_bytes: usize) -> Self {
        Self { max_source_bytes }
    }

    pub fn tokenize(&self, source: &str) -> Result<TokenSequence, LexError> {
        if source.len() > self.max_source_bytes {
            return Err(LexError::Oversize {
                size: source.len(),
                limit: self.max_source_bytes,
            });
        }
        Ok(Scanner::new(source).run())
    }
}

/// Tokenizes with the default size limit.
pub fn tokenize(source: &str) -> Result<TokenSequence, LexError> {
    Lexer::default().tokenize(source)
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
    tokens: Vec<Token>,
    // start of a pending run of unclassifiable characters
    junk_start: Option<usize>,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            pos: 0,
            tokens: Vec::new(),
            junk_start: None,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn push(&mut self, kind: TokenKind, text: &str) {
        self.flush_junk();
        self.tokens.push(Token::new(kind, escape_separator(text)));
    }

    fn flush_junk(&mut self) {
        if let Some(start) = self.junk_start.take() {
            let text = escape_separator(&self.src[start..self.pos]);
            self.tokens.push(Token::new(TokenKind::Delimiter, text));
        }
    }

    fn run(mut self) -> TokenSequence {
        while let Some(c) = self.peek() {
            if c == '\\' && self.line_continuation() {
                continue;
            }
            if c.is_whitespace() {
                self.flush_junk();
                self.pos += c.len_utf8();
                continue;
            }
            if c == '#' {
                self.flush_junk();
                self.skip_comment();
                continue;
            }
            if self.try_string() || self.try_number() || self.try_word() || self.try_symbol() {
                continue;
            }
            // unclassifiable: extend the current junk run
            if self.junk_start.is_none() {
                self.junk_start = Some(self.pos);
            }
            self.pos += c.len_utf8();
        }
        self.flush_junk();
        TokenSequence {
            tokens: self.tokens,
        }
    }

    fn line_continuation(&mut self) -> bool {
        let rest = self.rest();
        let tail = &rest[1..];
        let skip = if tail.starts_with("\r\n") {
            3
        } else if tail.starts_with('\n') {
            2
        } else {
            return false;
        };
        self.flush_junk();
        self.pos += skip;
        true
    }

    fn skip_comment(&mut self) {
        match self.rest().find('\n') {
            Some(off) => self.pos += off,
            None => self.pos = self.src.len(),
        }
    }

    fn try_string(&mut self) -> bool {
        let rest = self.rest();
        let prefix_len = rest
            .char_indices()
            .take_while(|(i, c)| {
                *i < 2 && matches!(c, 'r' | 'R' | 'b' | 'B' | 'u' | 'U' | 'f' | 'F')
            })
            .count();
        let mut quote_at = None;
        for plen in (0..=prefix_len).rev() {
            if valid_string_prefix(&rest[..plen]) && rest[plen..].starts_with(['\'', '"']) {
                quote_at = Some(plen);
                break;
            }
        }
        let Some(plen) = quote_at else {
            return false;
        };
        let body = &rest[plen..];
        let quote = body.as_bytes()[0];
        let triple = body.len() >= 3 && body.as_bytes()[1] == quote && body.as_bytes()[2] == quote;
        let open_len = if triple { 3 } else { 1 };

        let bytes = body.as_bytes();
        let mut i = open_len;
        let mut end = None;
        while i < bytes.len() {
            let b = bytes[i];
            // raw strings still cannot end on an escaped quote
            if b == b'\\' {
                i += 2;
                continue;
            }
            if !triple && b == b'\n' {
                break;
            }
            if b == quote {
                if !triple {
                    end = Some(i + 1);
                    break;
                }
                if i + 2 < bytes.len() && bytes[i + 1] == quote && bytes[i + 2] == quote {
                    end = Some(i + 3);
                    break;
                }
            }
            i += 1;
        }
        match end {
            Some(e) => {
                let text = &rest[..plen + e];
                self.push(TokenKind::StringLiteral, text);
                self.pos += plen + e;
            }
            None => {
                // unterminated: the opening quote run is unlexable, lexing resumes after it
                if self.junk_start.is_none() {
                    self.junk_start = Some(self.pos);
                }
                self.pos += plen + open_len;
            }
        }
        true
    }

    fn try_number(&mut self) -> bool {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let first = bytes[0];
        let starts_number = first.is_ascii_digit()
            || (first == b'.' && bytes.len() > 1 && bytes[1].is_ascii_digit());
        if !starts_number {
            return false;
        }
        let mut i = 0;
        if first == b'0'
            && bytes.len() > 1
            && matches!(bytes[1], b'x' | b'X' | b'o' | b'O' | b'b' | b'B')
        {
            i = 2;
            while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || bytes[i] == b'_') {
                i += 1;
            }
        } else {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                    i += 1;
                }
            }
            if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                let mut j = i + 1;
                if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                        i += 1;
                    }
                }
            }
        }
        if i < bytes.len() && matches!(bytes[i], b'j' | b'J') {
            i += 1;
        }
        let normalized: String = rest[..i]
            .chars()
            .filter(|&c| c != '_')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let normalized = if normalized.is_empty() {
            rest[..i].to_string()
        } else {
            normalized
        };
        self.push(TokenKind::NumberLiteral, &normalized);
        self.pos += i;
        true
    }

    fn try_word(&mut self) -> bool {
        let rest = self.rest();
        let mut chars = rest.char_indices();
        match chars.next() {
            Some((_, c)) if c == '_' || c.is_alphabetic() => {}
            _ => return false,
        }
        let end = rest
            .char_indices()
            .find(|&(_, c)| !(c == '_' || c.is_alphanumeric()))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let word = &rest[..end];
        let kind = if KEYWORDS.contains(&word) {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        };
        self.push(kind, word);
        self.pos += end;
        true
    }

    fn try_symbol(&mut self) -> bool {
        let rest = self.rest();
        // longest match across both tables: "->" beats "-", ":=" beats ":"
        let best = DELIMITERS
            .iter()
            .map(|s| (TokenKind::Delimiter, *s))
            .chain(OPERATORS.iter().map(|s| (TokenKind::Operator, *s)))
            .filter(|(_, s)| rest.starts_with(*s))
            .max_by_key(|(_, s)| s.len());
        match best {
            Some((kind, sym)) => {
                self.push(kind, sym);
                self.pos += sym.len();
                true
            }
            None => false,
        }
    }
}

fn valid_string_prefix(prefix: &str) -> bool {
    matches!(
        prefix.to_ascii_lowercase().as_str(),
        "" | "r" | "u" | "b" | "f" | "rb" | "br" | "fr" | "rf"
    )
}

fn escape_separator(text: &str) -> String {
    if text.contains(WINDOW_SEPARATOR as char) {
        text.replace(WINDOW_SEPARATOR as char, "\\x1f")
    } else {
        text.to_string()
    }
}

/// Set of hashed k-token windows of one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    /// Sorted, deduplicated window hashes.
    pub shingles: Vec<u64>,
    pub k: usize,
    pub source_token_count: usize,
}

impl ShingleSet {
    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.shingles.iter().copied()
    }
}

/// Hashes every window of `k` consecutive tokens. `k` of zero is treated as 1.
pub fn shingle(tokens: &TokenSequence, k: usize) -> ShingleSet {
    let k = k.max(1);
    let n = tokens.len();
    let mut shingles: Vec<u64> = if n < k {
        Vec::new()
    } else {
        tokens.tokens.windows(k).map(hash_window).collect()
    };
    shingles.sort_unstable();
    shingles.dedup();
    ShingleSet {
        shingles,
        k,
        source_token_count: n,
    }
}

fn hash_window(window: &[Token]) -> u64 {
    let mut h = FnvHasher::default();
    for (i, tok) in window.iter().enumerate() {
        if i > 0 {
            h.write_u8(WINDOW_SEPARATOR);
        }
        h.write(tok.kind.tag().as_bytes());
        h.write_u8(b':');
        h.write(tok.text.as_bytes());
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds_texts(seq: &TokenSequence) -> Vec<(TokenKind, &str)> {
        seq.iter().map(|t| (t.kind, t.text.as_str())).collect()
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
        assert!(tokenize("   \n\n# only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn assignment_with_trailing_comment() {
        let seq = tokenize("x = 1  # note").unwrap();
        assert_eq!(
            kinds_texts(&seq),
            vec![
                (TokenKind::Identifier, "x"),
                (TokenKind::Operator, "="),
                (TokenKind::NumberLiteral, "1"),
            ]
        );
    }

    #[test]
    fn import_statement() {
        let seq = tokenize("import torch").unwrap();
        assert_eq!(
            kinds_texts(&seq),
            vec![
                (TokenKind::Keyword, "import"),
                (TokenKind::Identifier, "torch")
            ]
        );
    }

    #[test]
    fn strings_and_prefixes() {
        let src = "a = r'\\d' + b\"x\" + '''multi\nline''' + f\"{y}\"";
        let seq = tokenize(src).unwrap();
        let strings: Vec<&str> = seq
            .iter()
            .filter(|t| t.kind == TokenKind::StringLiteral)
            .map(|t| t.text.as_str())
            .collect();
        assert_eq!(
            strings,
            vec!["r'\\d'", "b\"x\"", "'''multi\nline'''", "f\"{y}\""]
        );
    }

    #[test]
    fn escaped_quote_stays_inside_string() {
        let seq = tokenize(r#"s = "a\"b" ; t"#).unwrap();
        assert_eq!(seq.tokens[2].text, r#""a\"b""#);
        assert_eq!(seq.tokens[4].text, "t");
    }

    #[test]
    fn numbers_are_normalized() {
        let seq = tokenize("1_000 0XFF 1E5 .5 3j 2.").unwrap();
        let texts: Vec<&str> = seq.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["1000", "0xff", "1e5", ".5", "3j", "2."]);
        assert!(seq.iter().all(|t| t.kind == TokenKind::NumberLiteral));
    }

    #[test]
    fn operators_and_delimiters() {
        let seq = tokenize("def f(x) -> int: return x ** 2 // 3 ... a.b != c").unwrap();
        let got: Vec<(TokenKind, &str)> = kinds_texts(&seq);
        assert!(got.contains(&(TokenKind::Delimiter, "->")));
        assert!(got.contains(&(TokenKind::Operator, "**")));
        assert!(got.contains(&(TokenKind::Operator, "//")));
        assert!(got.contains(&(TokenKind::Delimiter, "...")));
        assert!(got.contains(&(TokenKind::Operator, "!=")));
        assert!(got.contains(&(TokenKind::Delimiter, ".")));
    }

    #[test]
    fn unlexable_runs_become_one_delimiter() {
        let seq = tokenize("a $$? b").unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.tokens[1].kind, TokenKind::Delimiter);
        assert_eq!(seq.tokens[1].text, "$$?");
        assert!(seq.tokens[1].is_unlexable());
        assert!(!tokenize("f(x)").unwrap().has_unlexable());
    }

    #[test]
    fn unterminated_string_is_unlexable_quote() {
        let seq = tokenize("x = 'abc\ny = 2").unwrap();
        assert!(seq.has_unlexable());
        assert!(seq.iter().any(|t| t.text == "y"));
    }

    #[test]
    fn separator_never_appears_in_lexemes() {
        let seq = tokenize("s = 'a\u{1f}b'\n\u{1f}").unwrap();
        assert!(seq.iter().all(|t| !t.text.contains('\u{1f}')));
    }

    #[test]
    fn oversize_input_is_rejected() {
        let lexer = Lexer::new(8);
        assert_eq!(
            lexer.tokenize("0123456789"),
            Err(LexError::Oversize { size: 10, limit: 8 })
        );
    }

    #[test]
    fn line_continuation_is_layout() {
        let a = tokenize("x = 1 + \\\n    2").unwrap();
        let b = tokenize("x = 1 + 2").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shingle_below_window_is_empty() {
        let seq = tokenize("a b c d e f g h i").unwrap();
        assert_eq!(seq.len(), 9);
        let s = shingle(&seq, 10);
        assert!(s.is_empty());
        assert_eq!(s.source_token_count, 9);
    }

    #[test]
    fn shingle_window_count() {
        let seq = tokenize("a b c d e f g h i j k l").unwrap();
        let s = shingle(&seq, 10);
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn repeated_windows_collapse() {
        let seq = tokenize(&"a ".repeat(30)).unwrap();
        assert_eq!(shingle(&seq, 10).len(), 1);
    }

    #[test]
    fn kind_participates_in_hash() {
        // "if" keyword vs "if_" identifier differ in text; compare same text different kind
        let a = TokenSequence {
            tokens: vec![Token::new(TokenKind::Identifier, "x")],
        };
        let b = TokenSequence {
            tokens: vec![Token::new(TokenKind::StringLiteral, "x")],
        };
        assert_ne!(shingle(&a, 1), shingle(&b, 1));
    }

    fn lexeme() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z_][a-z0-9_]{0,6}",
            "[0-9]{1,4}",
            "\"[a-z ]{0,5}\"",
            prop::sample::select(vec![
                "(", ")", "[", "]", ",", ":", "=", "+", "**", "->", "."
            ])
            .prop_map(String::from),
            prop::sample::select(vec!["def", "class", "return", "import", "for", "in"])
                .prop_map(String::from),
        ]
    }

    fn spacer() -> impl Strategy<Value = &'static str> {
        prop::sample::select(vec![" ", "  ", "\n", "\n\n", " \t ", "\n    \n  "])
    }

    proptest! {
        #[test]
        fn whitespace_insensitive(
            lexemes in prop::collection::vec(lexeme(), 0..40),
            spacers in prop::collection::vec(spacer(), 40),
            k in 1usize..12,
        ) {
            let plain = lexemes.join(" ");
            let mut spaced = String::new();
            for (i, l) in lexemes.iter().enumerate() {
                spaced.push_str(spacers[i]);
                spaced.push_str(l);
            }
            let a = shingle(&tokenize(&plain).unwrap(), k);
            let b = shingle(&tokenize(&spaced).unwrap(), k);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn comment_insensitive(
            lines in prop::collection::vec(prop::collection::vec(lexeme(), 1..6), 1..10),
            comment_after in prop::collection::vec(any::<bool>(), 10),
        ) {
            let plain: Vec<String> = lines.iter().map(|l| l.join(" ")).collect();
            let mut commented = String::new();
            for (i, l) in plain.iter().enumerate() {
                commented.push_str(l);
                commented.push('\n');
                if comment_after[i] {
                    commented.push_str("# a comment ( with ' junk\n");
                }
            }
            let a = shingle(&tokenize(&plain.join("\n")).unwrap(), 10);
            let b = shingle(&tokenize(&commented).unwrap(), 10);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn render_round_trip(lexemes in prop::collection::vec(lexeme(), 0..40)) {
            let src = lexemes.join(" ");
            let seq = tokenize(&src).unwrap();
            prop_assume!(!seq.has_unlexable());
            let again = tokenize(&seq.render()).unwrap();
            prop_assert_eq!(kinds_texts(&seq), kinds_texts(&again));
        }

        #[test]
        fn window_bound(n in 0usize..60, k in 1usize..15) {
            let src: Vec<String> = (0..n).map(|i| format!("t{}", i % 7)).collect();
            let seq = tokenize(&src.join(" ")).unwrap();
            let s = shingle(&seq, k);
            prop_assert!(s.len() <= (seq.len() + 1).saturating_sub(k));
            if seq.len() < k {
                prop_assert!(s.is_empty());
            }
        }

        #[test]
        fn total_on_arbitrary_text(src in "\\PC{0,200}") {
            let seq = tokenize(&src).unwrap();
            prop_assert!(seq.iter().all(|t| !t.text.is_empty()));
            prop_assert_eq!(seq, tokenize(&src).unwrap());
        }
    }
}

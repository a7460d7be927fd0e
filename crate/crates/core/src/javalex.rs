//! Java lexer and test-method pruning.
//!
//! The lexer covers the lexical grammar needed for bag-of-words features:
//! keywords, identifiers, numeric/string/char literals (text blocks included),
//! operators, separators and annotations. Comments and whitespace are dropped.
//! There is no generic-bracket disambiguation (`>>` stays one operator) and no
//! unicode-escape processing.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenKind {
    Keyword,
    Ident,
    IntLit,
    FloatLit,
    StringLit,
    CharLit,
    Operator,
    Separator,
    Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub line: u32,
    pub col: u32,
}

impl Token {
    fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    fn is_sep(&self, text: &str) -> bool {
        self.is(TokenKind::Separator, text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub origin: String,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = origin.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("unterminated string literal at {line}:{col}")]
    UnterminatedString { line: u32, col: u32 },
    #[error("unterminated char literal at {line}:{col}")]
    UnterminatedChar { line: u32, col: u32 },
    #[error("unterminated block comment at {line}:{col}")]
    UnterminatedComment { line: u32, col: u32 },
}

impl LexError {
    pub fn position(&self) -> (u32, u32) {
        match *self {
            LexError::UnterminatedString { line, col }
            | LexError::UnterminatedChar { line, col }
            | LexError::UnterminatedComment { line, col } => (line, col),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("method `{0}` not found")]
    MethodNotFound(String),
    #[error("unbalanced braces in method `{0}`")]
    UnbalancedBraces(String),
}

const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally", "float",
    "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long", "native",
    "new", "package", "private", "protected", "public", "return", "short", "static", "strictfp",
    "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try", "void",
    "volatile", "while", "true", "false", "null",
];

// Longest first so greedy matching picks the longest operator.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "->", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=",
    "*=", "/=", "&=", "|=", "^=", "%=", "<<", ">>", "=", ">", "<", "!", "~", "?", ":", "+", "-",
    "*", "/", "&", "|", "^", "%",
];

const SEPARATORS: &[&str] = &["...", "::", "(", ")", "{", "}", "[", "]", ";", ",", ".", "@"];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_part(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
    _src: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
            _src: src,
        }
    }

    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek(i) == Some(c))
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek(0)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn bump_n(&mut self, n: usize) {
        for _ in 0..n {
            self.bump();
        }
    }

    fn text_from(&self, start: usize) -> String {
        self.chars[start..self.pos].iter().collect()
    }

    fn skip_trivia(&mut self) -> Result<(), LexError> {
        loop {
            match self.peek(0) {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('/') if self.peek(1) == Some('/') => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                Some('/') if self.peek(1) == Some('*') => {
                    let (line, col) = (self.line, self.col);
                    self.bump_n(2);
                    loop {
                        if self.starts_with("*/") {
                            self.bump_n(2);
                            break;
                        }
                        if self.bump().is_none() {
                            return Err(LexError::UnterminatedComment { line, col });
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn lex_quoted(&mut self, quote: char) -> Result<(), LexError> {
        let (line, col) = (self.line, self.col);
        let err = if quote == '"' {
            LexError::UnterminatedString { line, col }
        } else {
            LexError::UnterminatedChar { line, col }
        };
        self.bump();
        loop {
            match self.peek(0) {
                None | Some('\n') => return Err(err),
                Some('\\') => {
                    self.bump();
                    if self.bump().is_none() {
                        return Err(err);
                    }
                }
                Some(c) if c == quote => {
                    self.bump();
                    return Ok(());
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
    }

    fn lex_text_block(&mut self) -> Result<(), LexError> {
        let (line, col) = (self.line, self.col);
        self.bump_n(3);
        loop {
            if self.starts_with("\"\"\"") {
                self.bump_n(3);
                return Ok(());
            }
            match self.bump() {
                None => return Err(LexError::UnterminatedString { line, col }),
                Some('\\') => {
                    self.bump();
                }
                Some(_) => {}
            }
        }
    }

    fn eat_digits(&mut self, pred: fn(char) -> bool) {
        while let Some(c) = self.peek(0) {
            if pred(c) || c == '_' {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn eat_exponent(&mut self, markers: [char; 2]) -> bool {
        if !matches!(self.peek(0), Some(c) if c == markers[0] || c == markers[1]) {
            return false;
        }
        let sign = usize::from(matches!(self.peek(1), Some('+' | '-')));
        if !matches!(self.peek(1 + sign), Some(c) if c.is_ascii_digit()) {
            return false;
        }
        self.bump_n(1 + sign);
        self.eat_digits(|c| c.is_ascii_digit());
        true
    }

    fn lex_number(&mut self) -> TokenKind {
        let mut float = false;
        let radix_prefix = self.peek(0) == Some('0') && matches!(self.peek(1), Some('x' | 'X' | 'b' | 'B'));
        if radix_prefix {
            let hex = matches!(self.peek(1), Some('x' | 'X'));
            self.bump_n(2);
            if hex {
                self.eat_digits(|c| c.is_ascii_hexdigit());
                if self.peek(0) == Some('.') {
                    self.bump();
                    self.eat_digits(|c| c.is_ascii_hexdigit());
                    float = true;
                }
                float |= self.eat_exponent(['p', 'P']);
            } else {
                self.eat_digits(|c| c == '0' || c == '1');
            }
        } else {
            self.eat_digits(|c| c.is_ascii_digit());
            if self.peek(0) == Some('.') {
                let next = self.peek(1);
                let takes_dot = match next {
                    Some(c) if c.is_ascii_digit() => true,
                    Some('e' | 'E' | 'f' | 'F' | 'd' | 'D') => true,
                    Some(c) => !(is_ident_part(c) || c == '.'),
                    None => true,
                };
                if takes_dot {
                    self.bump();
                    self.eat_digits(|c| c.is_ascii_digit());
                    float = true;
                }
            }
            float |= self.eat_exponent(['e', 'E']);
        }
        match self.peek(0) {
            Some('l' | 'L') => {
                self.bump();
            }
            Some('f' | 'F' | 'd' | 'D') if !radix_prefix || float => {
                self.bump();
                float = true;
            }
            _ => {}
        }
        if float {
            TokenKind::FloatLit
        } else {
            TokenKind::IntLit
        }
    }

    fn next_token(&mut self) -> Result<Option<Token>, LexError> {
        self.skip_trivia()?;
        let Some(c) = self.peek(0) else {
            return Ok(None);
        };
        let (line, col, start) = (self.line, self.col, self.pos);
        let kind = if is_ident_start(c) {
            self.bump();
            while matches!(self.peek(0), Some(c) if is_ident_part(c)) {
                self.bump();
            }
            if KEYWORDS.contains(&self.text_from(start).as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            }
        } else if c.is_ascii_digit()
            || (c == '.' && matches!(self.peek(1), Some(d) if d.is_ascii_digit()))
        {
            self.lex_number()
        } else if self.starts_with("\"\"\"") {
            self.lex_text_block()?;
            TokenKind::StringLit
        } else if c == '"' {
            self.lex_quoted('"')?;
            TokenKind::StringLit
        } else if c == '\'' {
            self.lex_quoted('\'')?;
            TokenKind::CharLit
        } else if c == '@' && matches!(self.peek(1), Some(d) if is_ident_start(d)) {
            self.bump();
            while matches!(self.peek(0), Some(c) if is_ident_part(c)) {
                self.bump();
            }
            TokenKind::Annotation
        } else if let Some(sep) = SEPARATORS.iter().find(|s| self.starts_with(s)) {
            self.bump_n(sep.chars().count());
            TokenKind::Separator
        } else if let Some(op) = OPERATORS.iter().find(|s| self.starts_with(s)) {
            self.bump_n(op.chars().count());
            TokenKind::Operator
        } else {
            // Stray characters (e.g. `#`, `\`) are kept as single-char operators
            // so no lexeme is lost.
            self.bump();
            TokenKind::Operator
        };
        Ok(Some(Token {
            kind,
            text: self.text_from(start),
            line,
            col,
        }))
    }
}

/// Lexes a whole Java source text.
pub fn tokenize(source: &str) -> Result<TokenStream, LexError> {
    let mut lexer = Lexer::new(source);
    let mut tokens = Vec::new();
    while let Some(tok) = lexer.next_token()? {
        tokens.push(tok);
    }
    Ok(TokenStream {
        tokens,
        origin: String::new(),
    })
}

fn matching_open_paren(tokens: &[Token], close: usize) -> Option<usize> {
    let mut depth = 0usize;
    for i in (0..=close).rev() {
        if tokens[i].is_sep(")") {
            depth += 1;
        } else if tokens[i].is_sep("(") {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn matching_close(tokens: &[Token], open: usize, open_text: &str, close_text: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        if t.is_sep(open_text) {
            depth += 1;
        } else if t.is_sep(close_text) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

/// Where a method declaration named at `name_idx` has its body `{`, if the
/// identifier starts a declaration with a body rather than a call.
fn declaration_body_start(tokens: &[Token], name_idx: usize) -> Option<usize> {
    if name_idx > 0 && tokens[name_idx - 1].is(TokenKind::Keyword, "new") {
        return None;
    }
    if !tokens.get(name_idx + 1)?.is_sep("(") {
        return None;
    }
    let close = matching_close(tokens, name_idx + 1, "(", ")")?;
    let mut k = close + 1;
    if tokens.get(k)?.is(TokenKind::Keyword, "throws") {
        while k < tokens.len() && !tokens[k].is_sep("{") && !tokens[k].is_sep(";") {
            k += 1;
        }
    }
    tokens.get(k).filter(|t| t.is_sep("{")).map(|_| k)
}

/// Index of the first token of the declaration header (annotations and
/// modifiers included) that ends at `name_idx`.
fn declaration_header_start(tokens: &[Token], name_idx: usize) -> usize {
    let mut b = name_idx;
    while b > 0 {
        let prev = &tokens[b - 1];
        if prev.is_sep(";") || prev.is_sep("{") || prev.is_sep("}") {
            break;
        }
        if prev.is_sep(")") {
            match matching_open_paren(tokens, b - 1) {
                Some(open) => b = open,
                None => break,
            }
        } else {
            b -= 1;
        }
    }
    b
}

/// Prunes a class file down to one method: leading annotations, signature and
/// body through the matching closing brace. Overloads resolve to the first
/// declaration in file order.
pub fn extract_test_method(source: &str, method_name: &str) -> Result<TokenStream, ExtractError> {
    let tokens = tokenize(source)?.tokens;
    let is_candidate = |i: usize| tokens[i].is(TokenKind::Ident, method_name);
    let mut found = None;
    for i in 0..tokens.len() {
        if is_candidate(i) {
            if let Some(body) = declaration_body_start(&tokens, i) {
                found = Some((i, body));
                break;
            }
        }
    }
    let (name_idx, body) = found.ok_or_else(|| ExtractError::MethodNotFound(method_name.to_string()))?;
    let end = matching_close(&tokens, body, "{", "}")
        .ok_or_else(|| ExtractError::UnbalancedBraces(method_name.to_string()))?;
    let later_overload = (end + 1..tokens.len())
        .any(|i| is_candidate(i) && declaration_body_start(&tokens, i).is_some());
    if later_overload {
        log::warn!("`{method_name}` is overloaded; using the first declaration");
    }
    let start = declaration_header_start(&tokens, name_idx);
    Ok(TokenStream {
        tokens: tokens[start..=end].to_vec(),
        origin: method_name.to_string(),
    })
}

/// Token texts joined by single spaces.
pub fn flatten(stream: &TokenStream) -> String {
    stream.texts().join(" ")
}

/// One row of the flattened-test CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlattenedTest {
    pub test_id: String,
    pub flattened_source: String,
}

pub fn write_flattened_csv<W: Write>(rows: &[FlattenedTest], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flattened_csv<R: Read>(reader: R) -> csv::Result<Vec<FlattenedTest>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    fn kinds_texts(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .unwrap()
            .tokens
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    fn kt(pairs: &[(TokenKind, &str)]) -> Vec<(TokenKind, String)> {
        pairs.iter().map(|(k, t)| (*k, t.to_string())).collect()
    }

    #[test]
    fn call_statement() {
        assert_eq!(
            kinds_texts("assertEquals(1, foo());"),
            kt(&[
                (Ident, "assertEquals"),
                (Separator, "("),
                (IntLit, "1"),
                (Separator, ","),
                (Ident, "foo"),
                (Separator, "("),
                (Separator, ")"),
                (Separator, ")"),
                (Separator, ";"),
            ])
        );
    }

    #[test]
    fn line_comment_skipped() {
        assert_eq!(
            kinds_texts("// note\nint x;"),
            kt(&[(Keyword, "int"), (Ident, "x"), (Separator, ";")])
        );
    }

    #[test]
    fn escaped_quote_kept_verbatim() {
        let toks = kinds_texts(r#"String s = "a\"b";"#);
        assert_eq!(toks[3], (StringLit, r#""a\"b""#.to_string()));
    }

    #[test]
    fn literals_and_annotations() {
        let toks = kinds_texts("@Test(timeout = 10L) float f = 1.5e-3f + .5 + 0x1F + 'c' + 1_000;");
        assert_eq!(toks[0], (Annotation, "@Test".into()));
        assert!(toks.contains(&(IntLit, "10L".into())));
        assert!(toks.contains(&(FloatLit, "1.5e-3f".into())));
        assert!(toks.contains(&(FloatLit, ".5".into())));
        assert!(toks.contains(&(IntLit, "0x1F".into())));
        assert!(toks.contains(&(CharLit, "'c'".into())));
        assert!(toks.contains(&(IntLit, "1_000".into())));
    }

    #[test]
    fn operators_greedy() {
        let toks = kinds_texts("a >>>= b -> c :: d ... e");
        let texts: Vec<_> = toks.iter().map(|(_, t)| t.as_str()).collect();
        assert_eq!(texts, ["a", ">>>=", "b", "->", "c", "::", "d", "...", "e"]);
    }

    #[test]
    fn positions_are_one_based() {
        let ts = tokenize("int\n  x;").unwrap();
        assert_eq!((ts.tokens[0].line, ts.tokens[0].col), (1, 1));
        assert_eq!((ts.tokens[1].line, ts.tokens[1].col), (2, 3));
    }

    #[test]
    fn lex_errors() {
        assert_eq!(
            tokenize("x = \"abc").unwrap_err(),
            LexError::UnterminatedString { line: 1, col: 5 }
        );
        assert_eq!(
            tokenize("c = 'a").unwrap_err(),
            LexError::UnterminatedChar { line: 1, col: 5 }
        );
        assert_eq!(
            tokenize("a /* never").unwrap_err(),
            LexError::UnterminatedComment { line: 1, col: 3 }
        );
    }

    #[test]
    fn text_block() {
        let toks = kinds_texts("String s = \"\"\"\n  hi \"quoted\"\n  \"\"\";");
        assert_eq!(toks[3].0, StringLit);
        assert!(toks[3].1.starts_with("\"\"\"") && toks[3].1.ends_with("\"\"\""));
    }

    const CLASS: &str = r#"
package p;
public class FooTest {
    private int field = 3;
    @Before public void setUp() { field = 1; }
    /** doc */
    @Test
    public void a() { assertEquals(1, field); }
    @Test(expected = Exception.class)
    @SuppressWarnings({"x", "y"})
    public void b() throws Exception {
        if (a()) { new Runnable() { public void run() {} }; }
        String s = "}";
    }
    void t(int x) { one(); }
    void t(String x) { two(); }
}
"#;

    #[test]
    fn extracts_only_requested_method() {
        let b = extract_test_method(CLASS, "b").unwrap();
        let text = flatten(&b);
        assert!(text.starts_with("@Test ( expected = Exception . class ) @SuppressWarnings"));
        assert!(text.ends_with("String s = \"}\" ; }"));
        assert!(!text.contains("assertEquals"));
        let a = extract_test_method(CLASS, "a").unwrap();
        assert_eq!(flatten(&a), "@Test public void a ( ) { assertEquals ( 1 , field ) ; }");
    }

    #[test]
    fn missing_and_overloaded() {
        assert_eq!(
            extract_test_method(CLASS, "missing").unwrap_err(),
            ExtractError::MethodNotFound("missing".into())
        );
        let t = extract_test_method(CLASS, "t").unwrap();
        assert_eq!(flatten(&t), "void t ( int x ) { one ( ) ; }");
    }

    #[test]
    fn unbalanced_braces() {
        let src = "class A { void m() { if (x) { y(); }";
        assert_eq!(
            extract_test_method(src, "m").unwrap_err(),
            ExtractError::UnbalancedBraces("m".into())
        );
    }

    #[test]
    fn flatten_cases() {
        assert_eq!(flatten(&tokenize("int x;").unwrap()), "int x ;");
        assert_eq!(flatten(&TokenStream::default()), "");
        assert_eq!(
            flatten(&tokenize("assertEquals(1, foo());").unwrap()),
            "assertEquals ( 1 , foo ( ) ) ;"
        );
    }

    #[test]
    fn flattened_csv_quotes() {
        let rows = vec![FlattenedTest {
            test_id: "p.C.m".into(),
            flattened_source: "String s = \"a,b\" ;".into(),
        }];
        let mut buf = Vec::new();
        write_flattened_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("test_id,flattened_source\n"));
        assert_eq!(read_flattened_csv(buf.as_slice()).unwrap(), rows);
    }
}

//! Recursive-descent parser for the admin DSL:
//!
//! ```text
//! script    := { stmt ";" }
//! stmt      := create | drop | grant | revoke
//! create    := "CREATE" "ACTORS" "OF" "TYPE" ident "WITH" "NAMES" "IN" namelist
//! drop      := "DROP"   "ACTORS" "OF" "TYPE" ident "WITH" "NAMES" "IN" namelist
//! revoke    := "REVOKE" "ACCESS" "TO" "ACTORS" "OF" "TYPE" "ALL"
//!              "FROM" "ACTORS" "OF" "TYPE" "ALL"
//! grant     := "GRANT" pattern "ACCESS" "TO" pattern { "AND" "ACCESS" "TO" pattern }
//! pattern   := "ACTORS" "OF" "TYPE" ident [ "WITH" "METHODS" "IN" namelist ]
//!              [ "WITH" "NAMES" "IN" namelist ]
//! namelist  := "(" ident { "," ident } ")"
//! ```
//!
//! Keywords are case-insensitive; `--` comments run to end of line.

use super::{AccessRule, ActorPattern, AdminCommand, NameSet, PatternTerm};
use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub text: TokenText,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenText {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Semi,
}

impl TokenText {
    fn display(&self) -> String {
        match self {
            TokenText::Ident(s) => s.clone(),
            TokenText::LParen => "(".into(),
            TokenText::RParen => ")".into(),
            TokenText::Comma => ",".into(),
            TokenText::Semi => ";".into(),
        }
    }
}

pub(crate) fn lex(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '-' => {
                let start_col = col;
                chars.next();
                col += 1;
                if chars.peek() == Some(&'-') {
                    // comment to end of line
                    while let Some(&c2) = chars.peek() {
                        if c2 == '\n' {
                            break;
                        }
                        chars.next();
                        col += 1;
                    }
                } else {
                    return Err(EngineError::Syntax {
                        line,
                        col: start_col,
                        found: "-".into(),
                        expected: "`--` comment or token".into(),
                    });
                }
            }
            '(' => {
                out.push(Token {
                    text: TokenText::LParen,
                    line,
                    col,
                });
                chars.next();
                col += 1;
            }
            ')' => {
                out.push(Token {
                    text: TokenText::RParen,
                    line,
                    col,
                });
                chars.next();
                col += 1;
            }
            ',' => {
                out.push(Token {
                    text: TokenText::Comma,
                    line,
                    col,
                });
                chars.next();
                col += 1;
            }
            ';' => {
                out.push(Token {
                    text: TokenText::Semi,
                    line,
                    col,
                });
                chars.next();
                col += 1;
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let start_col = col;
                let mut ident = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2.is_ascii_alphanumeric() || c2 == '_' {
                        ident.push(c2);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token {
                    text: TokenText::Ident(ident),
                    line,
                    col: start_col,
                });
            }
            other => {
                return Err(EngineError::Syntax {
                    line,
                    col,
                    found: other.to_string(),
                    expected: "identifier, `(`, `)`, `,` or `;`".into(),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_line: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn err(&self, expected: &str) -> EngineError {
        match self.peek() {
            Some(t) => EngineError::Syntax {
                line: t.line,
                col: t.col,
                found: t.text.display(),
                expected: expected.into(),
            },
            None => EngineError::Syntax {
                line: self.end_line,
                col: self.end_col,
                found: "end of input".into(),
                expected: expected.into(),
            },
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(Token {
                text: TokenText::Ident(s),
                ..
            }) if s.eq_ignore_ascii_case(kw) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(&format!("keyword `{kw}`"))),
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(),
            Some(Token { text: TokenText::Ident(s), .. }) if s.eq_ignore_ascii_case(kw))
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Token {
                text: TokenText::Ident(s),
                ..
            }) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(what)),
        }
    }

    fn punct(&mut self, t: TokenText, what: &str) -> Result<()> {
        if self.peek().map(|tok| &tok.text) == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(what))
        }
    }

    fn namelist(&mut self) -> Result<Vec<String>> {
        self.punct(TokenText::LParen, "`(`")?;
        let mut names = vec![self.ident("name")?];
        loop {
            match self.peek().map(|t| &t.text) {
                Some(TokenText::Comma) => {
                    self.pos += 1;
                    names.push(self.ident("name")?);
                }
                Some(TokenText::RParen) => {
                    self.pos += 1;
                    return Ok(names);
                }
                _ => return Err(self.err("`,` or `)`")),
            }
        }
    }

    fn pattern(&mut self) -> Result<ActorPattern> {
        self.keyword("ACTORS")?;
        self.keyword("OF")?;
        self.keyword("TYPE")?;
        let ty = self.ident("type name or ALL")?;
        let type_name = if ty.eq_ignore_ascii_case("ALL") {
            PatternTerm::All
        } else {
            PatternTerm::Type(ty)
        };
        let mut methods = NameSet::All;
        let mut names = NameSet::All;
        while self.peek_keyword("WITH") {
            self.pos += 1;
            if self.peek_keyword("METHODS") {
                self.pos += 1;
                self.keyword("IN")?;
                methods = NameSet::Set(self.namelist()?);
            } else if self.peek_keyword("NAMES") {
                self.pos += 1;
                self.keyword("IN")?;
                names = NameSet::Set(self.namelist()?);
            } else {
                return Err(self.err("`METHODS` or `NAMES`"));
            }
        }
        Ok(ActorPattern {
            type_name,
            methods,
            names,
        })
    }

    fn statement(&mut self) -> Result<AdminCommand> {
        if self.peek_keyword("CREATE") || self.peek_keyword("DROP") {
            let create = self.peek_keyword("CREATE");
            self.pos += 1;
            self.keyword("ACTORS")?;
            self.keyword("OF")?;
            self.keyword("TYPE")?;
            let type_name = self.ident("type name")?;
            self.keyword("WITH")?;
            self.keyword("NAMES")?;
            self.keyword("IN")?;
            let names = self.namelist()?;
            Ok(if create {
                AdminCommand::CreateActors { type_name, names }
            } else {
                AdminCommand::DropActors { type_name, names }
            })
        } else if self.peek_keyword("REVOKE") {
            self.pos += 1;
            self.keyword("ACCESS")?;
            self.keyword("TO")?;
            self.keyword("ACTORS")?;
            self.keyword("OF")?;
            self.keyword("TYPE")?;
            self.keyword("ALL")?;
            self.keyword("FROM")?;
            self.keyword("ACTORS")?;
            self.keyword("OF")?;
            self.keyword("TYPE")?;
            self.keyword("ALL")?;
            Ok(AdminCommand::RevokeAll)
        } else if self.peek_keyword("GRANT") {
            self.pos += 1;
            let subject = self.pattern()?;
            self.keyword("ACCESS")?;
            self.keyword("TO")?;
            let mut objects = vec![self.pattern()?];
            while self.peek_keyword("AND") {
                self.pos += 1;
                self.keyword("ACCESS")?;
                self.keyword("TO")?;
                objects.push(self.pattern()?);
            }
            Ok(AdminCommand::Grant(AccessRule { subject, objects }))
        } else {
            Err(self.err("`CREATE`, `DROP`, `GRANT` or `REVOKE`"))
        }
    }
}

/// Parse an admin script into commands.
pub fn parse_admin_script(text: &str) -> Result<Vec<AdminCommand>> {
    let tokens = lex(text)?;
    let (end_line, end_col) = text.lines().enumerate().last().map_or((1, 1), |(i, l)| {
        (i + 1, l.chars().count() + 1)
    });
    let mut p = Parser {
        tokens,
        pos: 0,
        end_line,
        end_col,
    };
    let mut commands = Vec::new();
    while p.peek().is_some() {
        let cmd = p.statement()?;
        p.punct(TokenText::Semi, "`;`")?;
        commands.push(cmd);
    }
    Ok(commands)
}

fn print_namelist(out: &mut String, names: &[String]) {
    out.push('(');
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(n);
    }
    out.push(')');
}

fn print_pattern(out: &mut String, p: &ActorPattern) {
    out.push_str("ACTORS OF TYPE ");
    match &p.type_name {
        PatternTerm::All => out.push_str("ALL"),
        PatternTerm::Type(t) => out.push_str(t),
    }
    if let NameSet::Set(ms) = &p.methods {
        out.push_str(" WITH METHODS IN ");
        print_namelist(out, ms);
    }
    if let NameSet::Set(ns) = &p.names {
        out.push_str(" WITH NAMES IN ");
        print_namelist(out, ns);
    }
}

/// Canonical rendering; reparses to an equal command list and matches the
/// source token-for-token when the source used uppercase keywords.
pub fn pretty_print(commands: &[AdminCommand]) -> String {
    let mut out = String::new();
    for cmd in commands {
        match cmd {
            AdminCommand::CreateActors { type_name, names }
            | AdminCommand::DropActors { type_name, names } => {
                let verb = if matches!(cmd, AdminCommand::CreateActors { .. }) {
                    "CREATE"
                } else {
                    "DROP"
                };
                out.push_str(verb);
                out.push_str(" ACTORS OF TYPE ");
                out.push_str(type_name);
                out.push_str(" WITH NAMES IN ");
                print_namelist(&mut out, names);
            }
            AdminCommand::RevokeAll => {
                out.push_str("REVOKE ACCESS TO ACTORS OF TYPE ALL FROM ACTORS OF TYPE ALL");
            }
            AdminCommand::Grant(rule) => {
                out.push_str("GRANT ");
                print_pattern(&mut out, &rule.subject);
                for (i, obj) in rule.objects.iter().enumerate() {
                    out.push_str(if i == 0 { " ACCESS TO " } else { " AND ACCESS TO " });
                    print_pattern(&mut out, obj);
                }
            }
        }
        out.push_str(";\n");
    }
    out
}

/// Token streams of two scripts, for whitespace-insensitive comparison.
pub fn token_texts(script: &str) -> Result<Vec<String>> {
    Ok(lex(script)?.into_iter().map(|t| t.text.display()).collect())
}
